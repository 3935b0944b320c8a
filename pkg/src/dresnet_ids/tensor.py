"""Dense float64 tensors with a reverse-mode differentiation tape.

Operations record onto the innermost active :class:`Tape` when at least one
input requires a gradient. Outside a ``with Tape():`` block nothing is
recorded, which is how inference runs.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum_all(mul(x, x))
    >>> backward(y, tape)
    >>> x.grad
    array([2., 4.])
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels


class AutodiffError(ValueError):
    """Raised for malformed tensors, shapes, or tape usage."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared where only finite values are allowed."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


class Node:
    __slots__ = ("op", "inputs", "output", "backward", "tape")

    def __init__(self, op, inputs, output, backward, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.tape = tape


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order. A tape belongs to one thread.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        for node in self.nodes:
            node.output._node = None
            node.output.requires_grad = False
        self.nodes.clear()

    @classmethod
    def current(cls) -> Optional["Tape"]:
        stack = getattr(cls._local, "stack", None)
        if not stack:
            return None
        return stack[-1]


class no_grad:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(None)

    def __exit__(self, *exc):
        Tape._local.stack.pop()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite output from {op}")
    tape = Tape.current()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        node = Node(op, tuple(inputs), result, backward_fn, tape)
        result._node = node
        tape.nodes.append(node)
    return result


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Gradients add onto whatever is already stored, so calling this twice
    without clearing doubles them.
    """
    if loss.size != 1:
        raise AutodiffError(f"loss must be a scalar, got shape {list(loss.shape)}")
    if loss._node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise AutodiffError("loss is detached from any tape")
    if tape is None:
        tape = loss._node.tape
    elif loss._node.tape is not tape:
        raise AutodiffError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                _accumulate(inp, gi)
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sum_all(a: Tensor) -> Tensor:
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    if n == 0:
        raise AutodiffError("mean over an empty axis")

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / n,)

    return _record("mean", a.data.mean(axis=axis), (a,), bw)


# -- structural --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., k] @ b[k, n]``."""
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch {list(a.shape)} @ {list(b.shape)}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _record("matmul", out, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise AutodiffError(f"cannot reshape {list(a.shape)} into {list(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise AutodiffError("concat of nothing")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tensors, bw)


# -- layer kernels -----------------------------------------------------------


def same_padding(k: int) -> tuple[int, int]:
    """Left-biased split of the ``k - 1`` padding cells."""
    return k // 2, (k - 1) // 2


def conv1d(x: Tensor, kernels_: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """1-D convolution over the length axis.

    ``x`` is ``(L, Cin)`` or ``(N, L, Cin)``; ``kernels_`` is ``(Cout, K, Cin)``.
    ``out[t, o] = bias[o] + sum_{k,c} x[t + k - pad, c] * kernels_[o, k, c]``.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise AutodiffError(f"conv1d expects (L, C) or (N, L, C), got {list(x.shape)}")
    cout, k, cin = kernels_.shape
    n, length, c = xd.shape
    if k < 1:
        raise AutodiffError("kernel size must be >= 1")
    if c != cin:
        raise AutodiffError(f"conv1d channel mismatch: input has {c}, kernels expect {cin}")
    if length < 1:
        raise AutodiffError("conv1d on an empty sequence")
    if padding == "same":
        left, right = same_padding(k)
    elif padding == "valid":
        if k > length:
            raise AutodiffError(f"valid padding needs K <= L (K={k}, L={length})")
        left = right = 0
    else:
        raise AutodiffError(f"unknown padding {padding!r}")
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0))) if left or right else xd
    lout = length + left + right - k + 1
    # (N, Lout, Cin, K) -> (N, Lout, K, Cin)
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2)
    cols = cols.reshape(n * lout, k * cin)
    wmat = kernels_.data.reshape(cout, k * cin)
    out = (cols @ wmat.T + bias.data).reshape(n, lout, cout)

    def bw(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(n * lout, cout)
        dw = (g2.T @ cols).reshape(cout, k, cin)
        db = g2.sum(axis=0)
        dcols = (g2 @ wmat).reshape(n, lout, k, cin)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j : j + lout, :] += dcols[:, :, j, :]
        dx = dxp[:, left : left + length, :]
        return (dx[0] if squeeze else dx), dw, db

    return _record("conv1d", out[0] if squeeze else out, (x, kernels_, bias), bw)


def gru(x: Tensor, w: Tensor, u: Tensor, b: Tensor, h0: Optional[Tensor] = None) -> Tensor:
    """Full-sequence GRU over the length axis.

    ``w`` is ``(Cin, 3H)`` packed as ``[Wz|Wr|Wh]``, ``u`` is ``(H, 3H)`` packed
    as ``[Uz|Ur|Uh]`` and ``b`` is ``(3H,)``. Per step::

        z  = sigmoid(x Wz + h Uz + bz)
        r  = sigmoid(x Wr + h Ur + br)
        hc = tanh(x Wh + (r * h) Uh + bh)
        h' = (1 - z) * h + z * hc

    Returns every hidden state, ``(L, H)`` or ``(N, L, H)``.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise AutodiffError(f"gru expects (L, C) or (N, L, C), got {list(x.shape)}")
    n, length, cin = xd.shape
    if length < 1:
        raise AutodiffError("gru on an empty sequence")
    hdim = u.shape[0]
    if w.shape != (cin, 3 * hdim) or u.shape != (hdim, 3 * hdim) or b.shape != (3 * hdim,):
        raise AutodiffError(
            f"gru weight shapes {list(w.shape)}, {list(u.shape)}, {list(b.shape)} "
            f"inconsistent with Cin={cin}, H={hdim}"
        )
    if h0 is None:
        h0d = np.zeros((n, hdim))
    else:
        h0d = np.ascontiguousarray(np.broadcast_to(h0.data, (n, hdim)), dtype=np.float64)
    xt = np.ascontiguousarray(xd.transpose(1, 0, 2))  # (L, N, Cin)
    xw = np.ascontiguousarray(xt @ w.data + b.data)
    ud = np.ascontiguousarray(u.data)
    hs, zs, rs, hcs = kernels.gru_scan(xw, ud, h0d)
    out = hs.transpose(1, 0, 2)

    def bw(g):
        g3 = g[None] if squeeze else g
        dhs = np.ascontiguousarray(g3.transpose(1, 0, 2))
        dxw, du, dh0 = kernels.gru_scan_backward(dhs, ud, h0d, hs, zs, rs, hcs)
        flat = dxw.reshape(-1, 3 * hdim)
        dw = xt.reshape(-1, cin).T @ flat
        db = flat.sum(axis=0)
        dx = (dxw @ w.data.T).transpose(1, 0, 2)
        grads = [dx[0] if squeeze else dx, dw, du, db]
        if h0 is not None:
            grads.append(_unbroadcast(dh0, h0.shape))
        return tuple(grads)

    inputs = (x, w, u, b) if h0 is None else (x, w, u, b, h0)
    out = np.ascontiguousarray(out)
    return _record("gru", out[0] if squeeze else out, inputs, bw)


GRU_KEYS = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")


def gru_forward(sequence: Tensor, params: dict, h0: Optional[Tensor] = None) -> Tensor:
    """GRU with the nine weights given separately (``Wz`` is ``(Cin, H)``, etc.)."""
    missing = [k for k in GRU_KEYS if k not in params]
    if missing:
        raise AutodiffError(f"missing GRU parameters: {missing}")
    w = concat([params["Wz"], params["Wr"], params["Wh"]], axis=1)
    u = concat([params["Uz"], params["Ur"], params["Uh"]], axis=1)
    b = concat([params["bz"], params["br"], params["bh"]], axis=0)
    return gru(sequence, w, u, b, h0)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature normalization over every axis but the last.

    In training mode the batch mean and population variance are used and the
    running statistics are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if eps <= 0:
        raise AutodiffError("batchnorm eps must be > 0")
    feats = x.shape[-1]
    if gamma.shape != (feats,) or beta.shape != (feats,):
        raise AutodiffError("batchnorm gamma/beta must match the feature axis")
    axes = tuple(range(x.data.ndim - 1))
    m = int(np.prod([x.shape[a] for a in axes], dtype=np.int64))
    if training:
        if m == 0:
            raise AutodiffError("batchnorm training needs at least one row")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if training:
            dx = inv / m * (
                m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
            )
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _record("batchnorm", out, (x, gamma, beta), bw)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity in inference mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise AutodiffError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record("softmax", p, (logits,), bw)


PROB_FLOOR = 1e-12


def softmax_cross_entropy(logits: Tensor, onehot) -> Tensor:
    """Mean categorical cross-entropy of ``softmax(logits)`` against one-hot rows.

    Probabilities are floored at 1e-12 before the log. The gradient is
    ``(softmax - onehot) / N`` regardless of the floor.
    """
    y = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot, dtype=np.float64)
    if logits.data.ndim != 2 or y.shape != logits.shape:
        raise AutodiffError(f"logits {list(logits.shape)} and one-hot {list(y.shape)} must be N x K")
    n, k = y.shape
    if k < 2:
        raise AutodiffError("cross-entropy needs at least two classes")
    if n == 0:
        raise AutodiffError("cross-entropy over an empty batch")
    if not (np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=1) == 1.0).all()):
        raise AutodiffError("one-hot rows must contain a single 1")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    p = np.exp(logp)
    picked = np.maximum(logp[y == 1.0], np.log(PROB_FLOOR))
    loss = -picked.mean()

    def bw(g):
        return (g * (p - y) / n,)

    return _record("softmax_cross_entropy", np.array(loss), (logits,), bw)
