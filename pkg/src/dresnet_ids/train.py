"""Mini-batch training with categorical cross-entropy, and prediction."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .layers import one_hot
from .model import Network
from .tensor import NonFiniteError

logger = logging.getLogger(__name__)


class TrainingError(ArithmeticError):
    """Training diverged (NaN or infinite loss)."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)


def train(network: Network, features: np.ndarray, labels: np.ndarray, config: TrainConfig,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> list[float]:
    """Train in place and return the mean loss of every epoch."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = network.config.num_classes
    if features.ndim != 2 or features.shape[1] != network.config.feature_count:
        raise ValueError(
            f"dataset has {features.shape[-1]} features, network expects {network.config.feature_count}"
        )
    if len(labels) != len(features):
        raise ValueError("one label per row required")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    params = list(network.parameters().values())
    opt = make_optimizer(params, config)
    rng = np.random.default_rng(config.seed)
    n = len(features)
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            for p in params:
                p.grad = None
            try:
                with T.Tape() as tape:
                    logits = network(features[idx], training=True)
                    loss = T.softmax_cross_entropy(logits, one_hot(labels[idx], K))
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from None
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"NaN loss at epoch {epoch}, batch {b}")
            T.backward(loss, tape)
            opt.step()
            total += value * len(idx)
        trace.append(total / max(n, 1))
        logger.debug("epoch %d loss %.6f", epoch + 1, trace[-1])
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    if trace:
        logger.info("trained %d epochs, final loss %.6f", len(trace), trace[-1])
    return trace


def predict_logits(network: Network, features, batch_size: int = 512) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != network.config.feature_count:
        raise ValueError(
            f"expected {network.config.feature_count} features, got shape {list(features.shape)}"
        )
    out = np.empty((len(features), network.config.num_classes))
    with T.no_grad():
        for start in range(0, len(features), batch_size):
            out[start : start + batch_size] = network(features[start : start + batch_size]).data
    return out


def argmax_classes(logits) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(np.asarray(logits), axis=-1)


def predict(network: Network, features, batch_size: int = 512) -> np.ndarray:
    """Class index per row (argmax of the softmax)."""
    return argmax_classes(predict_logits(network, features, batch_size))


def accuracy(network: Network, features, labels) -> float:
    return float(np.mean(predict(network, features) == np.asarray(labels)))
