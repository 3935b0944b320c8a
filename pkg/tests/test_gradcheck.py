import numpy as np
import pytest

from dresnet_ids import _gru_py, kernels
from dresnet_ids import tensor as T
from dresnet_ids.gradcheck import (
    NonDeterministicError,
    gradient_check,
    projected_loss,
    relative_error,
    tiny_network_check,
)
from dresnet_ids.layers import GRU, BatchNorm, Conv1D, Dense, one_hot
from dresnet_ids.model import ModelConfig, build_residual_unit
from dresnet_ids.tensor import Tape, Tensor, backward

TOL = 1e-4
AFFINE_TOL = 1e-9
# a loss that is affine in each coordinate has an exact central difference at
# any step; a unit step keeps cancellation error far below AFFINE_TOL
AFFINE_EPS = 1.0


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _check_layer(layer, x, rng, training=False, eps=1e-5):
    out_shape = layer(x, training).shape
    w = rng.normal(size=out_shape)
    params = [x, *layer.parameters().values()]
    return gradient_check(lambda: projected_loss(layer(x, training), w), params, eps)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([0.5]))[0] == 0.5


def test_affine_layer_tight(rng):
    # also within the general tolerance at the default step
    dense = Dense(6, 4, rng=rng)
    dense.bias.data[:] = rng.normal(size=4)
    assert _check_layer(dense, _leaf(rng, 5, 6), rng) < TOL
    assert _check_layer(dense, _leaf(rng, 5, 6), rng, eps=AFFINE_EPS) < AFFINE_TOL


def test_matmul_tight(rng):
    x, w = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    wp = rng.normal(size=(3, 2))
    assert gradient_check(lambda: projected_loss(T.matmul(x, w), wp), [x, w], AFFINE_EPS) < AFFINE_TOL


@pytest.mark.parametrize("K,padding", [(1, "same"), (3, "same"), (4, "same"), (3, "valid")])
def test_conv1d(rng, K, padding):
    conv = Conv1D(3, 4, K, rng=rng, padding=padding)
    conv.bias.data[:] = rng.normal(size=4)
    x = _leaf(rng, 2, 6, 3)
    assert _check_layer(conv, x, rng, eps=AFFINE_EPS) < AFFINE_TOL
    assert _check_layer(conv, x, rng) < TOL


def test_gru_layer(rng):
    assert _check_layer(GRU(3, 4, rng=rng), _leaf(rng, 2, 5, 3), rng) < TOL


def test_gru_with_initial_state(rng):
    x, w, u, b = _leaf(rng, 2, 4, 3), _leaf(rng, 3, 6), _leaf(rng, 2, 6), _leaf(rng, 6)
    h0 = Tensor(rng.uniform(-1, 1, size=2), requires_grad=True)
    wp = rng.normal(size=(2, 4, 2))
    assert gradient_check(lambda: projected_loss(T.gru(x, w, u, b, h0), wp), [x, w, u, b, h0]) < TOL


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm(rng, training):
    bn = BatchNorm(3)
    bn.gamma.data[:] = rng.normal(size=3)
    bn.beta.data[:] = rng.normal(size=3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, size=3)
    assert _check_layer(bn, _leaf(rng, 4, 5, 3), rng, training=training) < TOL


def test_elementwise_ops(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    wp = rng.normal(size=(3, 4))

    def fn():
        h = T.mul(T.sigmoid(T.add(a, b)), T.tanh(T.sub(a, b)))
        return T.add(projected_loss(h, wp), T.scale(T.sum_all(T.mean(a, 0)), 0.3))

    assert gradient_check(fn, [a, b]) < TOL


def test_softmax_and_loss(rng):
    logits = _leaf(rng, 6, 4)
    y = one_hot(rng.integers(0, 4, size=6), 4)
    wp = rng.normal(size=(6, 4))
    assert gradient_check(lambda: T.softmax_cross_entropy(logits, y), [logits]) < TOL
    assert gradient_check(lambda: projected_loss(T.softmax(logits), wp), [logits]) < TOL


def test_cross_entropy_gradient_closed_form(rng):
    logits = _leaf(rng, 5, 3)
    labels = rng.integers(0, 3, size=5)
    y = one_hot(labels, 3)
    with Tape() as tape:
        loss = T.softmax_cross_entropy(logits, y)
    backward(loss, tape)
    z = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(logits.grad, (p - y) / 5, atol=1e-10)


def test_residual_unit_f5_l5(rng):
    cfg = ModelConfig(feature_count=5, num_classes=3, dropout_rate=0.0)
    unit = build_residual_unit(cfg, in_channels=1)
    for p in unit.parameters().values():
        p.data[:] = rng.normal(scale=0.5, size=p.shape)
    assert _check_layer(unit, _leaf(rng, 3, 5, 1), rng, training=True) < TOL


def test_conv_bn_gru_stack(rng):
    conv, bn, gru = Conv1D(2, 3, 3, rng=rng), BatchNorm(3), GRU(3, 3, rng=rng)
    x = _leaf(rng, 4, 6, 2)
    wp = rng.normal(size=(4, 6, 3))
    params = [x, *conv.parameters().values(), *bn.parameters().values(), *gru.parameters().values()]
    err = gradient_check(lambda: projected_loss(gru(bn(conv(x), True)), wp), params)
    assert err < TOL


def test_zero_step_rejected(rng):
    x = _leaf(rng, 2)
    with pytest.raises(ValueError, match="step"):
        gradient_check(lambda: T.sum_all(x), [x], eps=0.0)
    with pytest.raises(ValueError):
        gradient_check(lambda: T.sum_all(x), [x], eps=-1e-5)


def test_stochastic_function_rejected(rng):
    x = _leaf(rng, 50)
    drop_rng = np.random.default_rng(1)
    with pytest.raises(NonDeterministicError):
        gradient_check(lambda: T.sum_all(T.dropout(x, 0.5, True, drop_rng)), [x])


def test_tiny_network_end_to_end():
    assert tiny_network_check(eps=1e-5, seed=0) < TOL


def test_backends_agree(rng):
    L, N, H = 6, 3, 4
    xw = rng.normal(size=(L, N, 3 * H))
    u = rng.normal(size=(H, 3 * H))
    h0 = rng.uniform(-1, 1, size=(N, H))
    fwd_py = _gru_py.gru_scan(xw, u, h0)
    fwd = kernels.gru_scan(xw, u, h0)
    for a, b in zip(fwd, fwd_py):
        np.testing.assert_allclose(a, b, atol=1e-13)
    dhs = rng.normal(size=(L, N, H))
    bw_py = _gru_py.gru_scan_backward(dhs, u, h0, *fwd_py)
    bw = kernels.gru_scan_backward(dhs, u, h0, *fwd)
    for a, b in zip(bw, bw_py):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_corrupted_backward_detected(rng, monkeypatch):
    real = kernels.gru_scan_backward

    def skewed(*args):
        dxw, du, dh0 = real(*args)
        return dxw, du * 1.001, dh0

    monkeypatch.setattr(kernels, "gru_scan_backward", skewed)
    assert _check_layer(GRU(2, 3, rng=rng), _leaf(rng, 2, 4, 2), rng) > TOL


def test_structural_zero_is_not_an_error(rng):
    # a bias in front of batch-statistics normalization has zero gradient
    conv, bn = Conv1D(2, 3, 3, rng=rng), BatchNorm(3)
    x = _leaf(rng, 4, 6, 2)
    wp = rng.normal(scale=10.0, size=(4, 6, 3))
    err = gradient_check(lambda: projected_loss(bn(conv(x), True), wp), [conv.bias])
    assert err == 0.0
