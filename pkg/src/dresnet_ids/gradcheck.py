"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class NonDeterministicError(RuntimeError):
    """The checked function returned different values for identical inputs."""


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-8)``, zeroed where ``|a - n| <= atol``."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.where(diff <= atol, 0.0, diff / denom)


def rounding_noise(value: float, eps: float) -> float:
    """Bound on the cancellation error of a central difference of ``value``.

    Gradients that are structurally zero (a bias feeding batch-statistics
    normalization, say) differ from their finite difference only by this
    noise, for which a relative error is meaningless.
    """
    return 10.0 * np.finfo(np.float64).eps * max(1.0, abs(value)) / eps


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, eps: float) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn().data)
            flat[i] = orig - eps
            fm = float(fn().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return grad


def analytic_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with T.Tape() as tape:
        loss = fn()
    T.backward(loss, tape)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, g in zip(params, saved):
        p.grad = g
    return grads


def gradient_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients.

    ``fn`` rebuilds a scalar from the current values of ``params``; it must be
    deterministic, so stochastic layers have to be off. The error per entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``; differences within the rounding noise
    of the difference quotient count as agreement.
    """
    if not eps > 0:
        raise ValueError(f"finite-difference step must be > 0, got {eps}")
    with T.no_grad():
        first = fn().data.copy()
        second = fn().data
    if first.size != 1:
        raise ValueError("checked function must return a scalar")
    if not np.array_equal(first, second):
        raise NonDeterministicError("function is not deterministic (is dropout active?)")
    atol = rounding_noise(float(first.reshape(())), eps)
    worst = 0.0
    for p, a in zip(params, analytic_gradients(fn, params)):
        n = numerical_gradient(fn, p, eps)
        if a.size:
            worst = max(worst, float(relative_error(a, n, atol).max()))
    return worst


def projected_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(out * weights)`` with fixed random weights."""
    return T.sum_all(T.mul(out, Tensor(weights)))


def tiny_network_check(eps: float = 1e-5, seed: int = 0, batch: int = 4) -> float:
    """End-to-end check of a small network (F=5, P=2, K=3) through the loss.

    Batch norm runs in training mode (batch statistics), dropout is off.
    """
    from .layers import one_hot
    from .model import ModelConfig, build_network

    cfg = ModelConfig(feature_count=5, num_classes=3, pairs=2, dropout_rate=0.0, seed=seed)
    net = build_network(cfg)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(batch, cfg.feature_count)), requires_grad=True)
    y = one_hot(rng.integers(0, cfg.num_classes, size=batch), cfg.num_classes)
    params = [x, *net.parameters().values()]

    def fn():
        return T.softmax_cross_entropy(net(x, training=True), y)

    return gradient_check(fn, params, eps)
