"""Residual Conv-GRU units in wide pairs, wired densely.

Layout for a record of ``F`` features::

    (N, F) --reshape--> (N, F, 1) = raw
    pair k input = concat(raw, bridge_1, ..., bridge_{k-1})       channels 1 + (k-1)B
    pair k       = concat(unit_a(input), unit_b(input)) -> 1x1 linear bridge -> (N, F, B)
    head         = concat(bridge_1..bridge_P) -> global average pool -> dense(K)

Each residual unit is ``BN -> Conv1D(F) -> BN -> GRU(F) -> RD`` plus a shortcut
(identity, or a bias-free 1x1 projection when the input width is not ``F``).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (
    GRU,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    InitPolicy,
    Layer,
    Reshape,
    add,
    global_average_pool,
)
from .tensor import AutodiffError, NonFiniteError, Tensor

# offsets separating the seed streams of different parts of the graph
_DROPOUT_STREAM = 1_000
_BRIDGE_STREAM = 2_000
_HEAD_STREAM = 3_000


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    feature_count: int
    num_classes: int
    kernel_size: int = 3
    pairs: int = 5
    bridge_width: Optional[int] = None
    dropout_rate: float = 0.2
    seed: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dense_connections: bool = True

    def __post_init__(self):
        if self.bridge_width is None:
            self.bridge_width = self.feature_count
        self.validate()

    def validate(self) -> None:
        if self.feature_count < 1:
            raise ConfigError("feature_count must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.kernel_size < 1:
            raise ConfigError("kernel_size must be >= 1")
        if self.pairs < 1:
            raise ConfigError("pairs must be >= 1")
        if self.bridge_width < 1:
            raise ConfigError("bridge_width must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.bn_eps <= 0:
            raise ConfigError("bn_eps must be > 0")

    @property
    def filters(self) -> int:
        # conv filters and GRU units are both tied to the feature count
        return self.feature_count

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


class ResidualUnit(Layer):
    kind = "residual_unit"

    def __init__(self, config: ModelConfig, in_channels: int, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None):
        if in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        F = config.filters
        self.in_channels = in_channels
        self.bn1 = BatchNorm(in_channels, config.bn_momentum, config.bn_eps)
        self.conv = Conv1D(in_channels, F, config.kernel_size, rng=rng)
        self.bn2 = BatchNorm(F, config.bn_momentum, config.bn_eps)
        self.gru = GRU(F, F, rng=rng)
        self.rd = Reshape((-1, F))
        self.shortcut = None if in_channels == F else Conv1D(in_channels, F, 1, rng=rng, use_bias=False)
        self.dropout = Dropout(config.dropout_rate, dropout_rng)

    def main_path(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.bn1(x, training)
        h = self.conv(h, training)
        h = self.bn2(h, training)
        h = self.gru(h, training)
        return self.rd(h) if h.data.ndim == 3 else T.reshape(h, (-1, self.conv.filters))

    def shortcut_path(self, x: Tensor) -> Tensor:
        return x if self.shortcut is None else self.shortcut(x)

    def forward(self, x, training=False):
        x = T.as_tensor(x)
        out = add(self.main_path(x, training), self.shortcut_path(x))
        return self.dropout(out, training)

    def _children(self):
        kids = [("bn1", self.bn1), ("conv", self.conv), ("bn2", self.bn2), ("gru", self.gru)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        return kids

    def main_path_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if not k.startswith("shortcut.")}

    def parameters(self):
        return {f"{n}.{k}": v for n, layer in self._children() for k, v in layer.parameters().items()}

    def buffers(self):
        return {f"{n}.{k}": v for n, layer in self._children() for k, v in layer.buffers().items()}


def build_residual_unit(config: ModelConfig, in_channels: int, index: int = 0) -> ResidualUnit:
    policy = InitPolicy(config.seed)
    return ResidualUnit(config, in_channels, policy.rng(index),
                        dropout_rng=policy.rng(_DROPOUT_STREAM, index))


def linear_bridge(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Activation-free 1x1 convolution: ``weights`` is ``(B, 1, C)``."""
    if bias is None:
        bias = Tensor(np.zeros(weights.shape[0]))
    return T.conv1d(x, weights, bias, padding="same")


class WidePair(Layer):
    kind = "wide_pair"

    def __init__(self, config: ModelConfig, in_channels: int, index: int = 0):
        self.in_channels = in_channels
        self.units = [build_residual_unit(config, in_channels, 2 * index + i) for i in range(2)]
        rng = InitPolicy(config.seed).rng(_BRIDGE_STREAM, index)
        self.bridge = Conv1D(2 * config.filters, config.bridge_width, 1, rng=rng)

    def concat_units(self, x: Tensor, training: bool = False) -> Tensor:
        return T.concat([u(x, training) for u in self.units], axis=-1)

    def forward(self, x, training=False):
        return self.bridge(self.concat_units(x, training), training)

    def parameters(self):
        out = {}
        for i, u in enumerate(self.units):
            out.update({f"units.{i}.{k}": v for k, v in u.parameters().items()})
        out.update({f"bridge.{k}": v for k, v in self.bridge.parameters().items()})
        return out

    def buffers(self):
        out = {}
        for i, u in enumerate(self.units):
            out.update({f"units.{i}.{k}": v for k, v in u.buffers().items()})
        return out


def build_wide_pair(config: ModelConfig, in_channels: int, index: int = 0) -> WidePair:
    if in_channels < 1:
        raise ConfigError("in_channels must be >= 1")
    return WidePair(config, in_channels, index)


@dataclass
class Network:
    config: ModelConfig
    pairs: list = field(default_factory=list)
    head: Optional[Dense] = None

    def input_channels(self, k: int) -> int:
        """Channels entering pair ``k`` (0-based)."""
        if not self.config.dense_connections:
            return 1 if k == 0 else self.config.bridge_width
        return 1 + k * self.config.bridge_width

    def dense_sources(self, k: int) -> list[int]:
        """Earlier pairs whose bridge outputs feed pair ``k``."""
        return list(range(k)) if self.config.dense_connections else ([k - 1] if k else [])

    def forward(self, batch, training: bool = False) -> Tensor:
        x = T.as_tensor(batch)
        F = self.config.feature_count
        if x.data.ndim == 1:
            x = T.reshape(x, (1, -1))
        if x.data.ndim != 2 or x.shape[1] != F:
            raise AutodiffError(f"expected a batch of {F} features, got shape {list(x.shape)}")
        raw = Reshape((F, 1))(x)
        bridged: list[Tensor] = []
        for k, pair in enumerate(self.pairs):
            sources = [bridged[j] for j in self.dense_sources(k)]
            inp = raw if not sources else (
                T.concat([raw, *sources], axis=-1) if self.config.dense_connections else sources[0]
            )
            try:
                bridged.append(pair(inp, training))
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite value in block {k}: {exc}") from None
        pooled = global_average_pool(T.concat(bridged, axis=-1))
        try:
            return self.head(pooled)
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite value in block {len(self.pairs)} (head): {exc}") from None

    __call__ = forward

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, pair in enumerate(self.pairs):
            out.update({f"pairs.{k}.{n}": v for n, v in pair.parameters().items()})
        out.update({f"head.{n}": v for n, v in self.head.parameters().items()})
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, pair in enumerate(self.pairs):
            out.update({f"pairs.{k}.{n}": v for n, v in pair.buffers().items()})
        return out

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def predict_proba(self, batch) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.forward(batch, training=False)).data


def build_network(config: ModelConfig) -> Network:
    config.validate()
    net = Network(config)
    for k in range(config.pairs):
        net.pairs.append(build_wide_pair(config, net.input_channels(k), k))
    rng = InitPolicy(config.seed).rng(_HEAD_STREAM)
    net.head = Dense(config.pairs * config.bridge_width, config.num_classes, rng=rng)
    return net
