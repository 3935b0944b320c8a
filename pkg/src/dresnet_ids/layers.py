"""Layer objects built on :mod:`dresnet_ids.tensor`.

Every layer holds its trainable tensors (``requires_grad=True``) and, for
batch norm, plain numpy running statistics. Inputs are ``(L, C)`` sequences or
``(N, L, C)`` batches of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import AutodiffError, Tensor


@dataclass(frozen=True)
class InitPolicy:
    """Seeded initialization.

    Conv and dense weights draw from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``;
    GRU recurrent weights use ``fan_in = H``. Biases start at zero, batch-norm
    gamma at one and beta at zero.
    """

    seed: int = 0

    def rng(self, *path: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), *(int(p) for p in path)])

    @staticmethod
    def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
        limit = 1.0 / np.sqrt(max(fan_in, 1))
        return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind: str = ""

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng=None,
                 padding: str = "same", use_bias: bool = True):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if filters < 1 or in_channels < 1:
            raise ValueError("conv1d needs at least one input channel and one filter")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.filters, self.kernel_size = in_channels, filters, kernel_size
        self.padding = padding
        self.use_bias = use_bias
        shape = (filters, kernel_size, in_channels)
        self.kernels = _param(InitPolicy.fan_in_uniform(rng, shape, kernel_size * in_channels), "kernels")
        # without a bias the zero vector is a constant, not a parameter
        self.bias = Tensor(np.zeros(filters), requires_grad=use_bias, name="bias")

    def parameters(self):
        return {"kernels": self.kernels, "bias": self.bias} if self.use_bias else {"kernels": self.kernels}

    def forward(self, x, training=False):
        return T.conv1d(x, self.kernels, self.bias, self.padding)


class Dense(Layer):
    """Affine map on the last axis."""

    kind = "dense"

    def __init__(self, in_features: int, units: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param(InitPolicy.fan_in_uniform(rng, (in_features, units), in_features), "weight")
        self.bias = _param(np.zeros(units), "bias")

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        return T.add(T.matmul(x, self.weight), self.bias)


class GRU(Layer):
    """Returns the whole hidden sequence, starting from a zero state."""

    kind = "gru"

    def __init__(self, in_features: int, units: int, rng=None):
        if units < 1:
            raise ValueError("GRU needs at least one unit")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        self.w = _param(InitPolicy.fan_in_uniform(rng, (in_features, 3 * units), in_features), "w")
        self.u = _param(InitPolicy.fan_in_uniform(rng, (units, 3 * units), units), "u")
        self.b = _param(np.zeros(3 * units), "b")

    def parameters(self):
        return {"w": self.w, "u": self.u, "b": self.b}

    def gate_weights(self) -> dict[str, np.ndarray]:
        """The packed weights split into ``Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh``."""
        H = self.units
        out = {}
        for i, g in enumerate("zrh"):
            sl = slice(i * H, (i + 1) * H)
            out[f"W{g}"] = self.w.data[:, sl]
            out[f"U{g}"] = self.u.data[:, sl]
            out[f"b{g}"] = self.b.data[sl]
        return out

    def forward(self, x, training=False):
        return T.gru(x, self.w, self.u, self.b)


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, features: int, momentum: float = 0.9, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.momentum, self.eps = momentum, eps
        self.gamma = _param(np.ones(features), "gamma")
        self.beta = _param(np.zeros(features), "beta")
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           training, self.momentum, self.eps)


def reshape_rd(x: Tensor, target) -> Tensor:
    """Reshape keeping the data; the gradient is reshaped back."""
    return T.reshape(x, target)


class Reshape(Layer):
    """Reshape Dimensionality. ``target`` excludes the leading batch axis."""

    kind = "reshape"

    def __init__(self, target):
        self.target = tuple(target)

    def forward(self, x, training=False):
        return reshape_rd(x, (x.shape[0], *self.target))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"add needs identical shapes, got {list(a.shape)} and {list(b.shape)}")
    return T.add(a, b)


class Add(Layer):
    kind = "add"

    def forward(self, pair, training=False):
        a, b = pair
        return add(a, b)


class Concat(Layer):
    kind = "concat"

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, xs, training=False):
        return T.concat(list(xs), self.axis)


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the length axis: ``(L, C) -> (C,)`` or ``(N, L, C) -> (N, C)``."""
    if x.data.ndim < 2:
        raise AutodiffError("global average pooling needs a length axis")
    if x.shape[-2] == 0:
        raise AutodiffError("global average pooling over an empty sequence")
    return T.mean(x, axis=x.data.ndim - 2)


class GlobalAveragePool(Layer):
    kind = "gap"

    def forward(self, x, training=False):
        return global_average_pool(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        return T.dropout(x, self.rate, training, self.rng)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        return T.softmax(x)


def softmax_cross_entropy(logits: Tensor, onehot) -> Tensor:
    return T.softmax_cross_entropy(logits, onehot)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
