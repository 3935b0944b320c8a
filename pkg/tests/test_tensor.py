import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dresnet_ids import tensor as T
from dresnet_ids.tensor import AutodiffError, NonFiniteError, Tape, Tensor, backward


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _conv_direct(x, kern, bias):
    # hand-rolled oracle: zero padding, left = K//2
    L, cin = x.shape
    cout, K, _ = kern.shape
    left = K // 2
    out = np.zeros((L, cout))
    for t in range(L):
        for o in range(cout):
            acc = bias[o]
            for k in range(K):
                s = t + k - left
                if 0 <= s < L:
                    acc += sum(x[s, c] * kern[o, k, c] for c in range(cin))
            out[t, o] = acc
    return out


class TestConv1d:
    def _run(self, x, kern, bias, padding="same"):
        return T.conv1d(Tensor(np.array(x, float)), Tensor(np.array(kern, float)),
                        Tensor(np.array(bias, float)), padding).data

    def test_identity_kernel(self):
        out = self._run([[1], [2], [3]], [[[0], [1], [0]]], [0])
        assert out.ravel().tolist() == [1, 2, 3]

    def test_box_kernel_zero_padding(self):
        out = self._run([[1], [2], [3]], [[[1], [1], [1]]], [0])
        assert out.ravel().tolist() == [3, 6, 5]

    def test_zero_kernel_gives_bias(self):
        out = self._run([[1], [2], [3]], [[[0], [0], [0]]], [0.5])
        assert out.ravel().tolist() == [0.5, 0.5, 0.5]

    def test_even_kernel_left_biased(self):
        assert T.same_padding(4) == (2, 1)
        x = np.arange(1.0, 6.0)[:, None]
        kern = np.array([[[1.0], [10.0], [100.0], [1000.0]]])
        out = self._run(x, kern, [0])
        np.testing.assert_allclose(out, _conv_direct(x, kern, np.zeros(1)))

    def test_valid_padding_length(self):
        out = self._run(np.ones((6, 2)), np.ones((3, 3, 2)), np.zeros(3), "valid")
        assert out.shape == (4, 3)
        assert np.all(out == 6)

    def test_matches_direct_oracle(self, rng):
        for K in (1, 2, 3, 5):
            x = rng.normal(size=(7, 3))
            kern = rng.normal(size=(4, K, 3))
            bias = rng.normal(size=4)
            np.testing.assert_allclose(self._run(x, kern, bias), _conv_direct(x, kern, bias), atol=1e-12)

    def test_batched_equals_per_sample(self, rng):
        x = rng.normal(size=(3, 6, 2))
        kern = rng.normal(size=(5, 3, 2))
        bias = rng.normal(size=5)
        batched = self._run(x, kern, bias)
        for i in range(3):
            np.testing.assert_allclose(batched[i], self._run(x[i], kern, bias), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(AutodiffError, match="channel mismatch"):
            self._run(np.ones((4, 2)), np.ones((1, 3, 3)), [0])

    def test_valid_kernel_longer_than_input(self):
        with pytest.raises(AutodiffError):
            self._run(np.ones((2, 1)), np.ones((1, 3, 1)), [0], "valid")

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 4)),
                  elements=st.floats(-1e3, 1e3)), st.sampled_from([1, 3, 5]))
    def test_identity_kernel_property(self, x, K):
        cin = x.shape[1]
        kern = np.zeros((cin, K, cin))
        for c in range(cin):
            kern[c, K // 2, c] = 1.0
        np.testing.assert_array_equal(self._run(x, kern, np.zeros(cin)), x)


class TestGru:
    def _zero_params(self, cin, h):
        p = {k: Tensor(np.zeros((cin, h))) for k in ("Wz", "Wr", "Wh")}
        p.update({k: Tensor(np.zeros((h, h))) for k in ("Uz", "Ur", "Uh")})
        p.update({k: Tensor(np.zeros(h)) for k in ("bz", "br", "bh")})
        return p

    def test_zero_parameters_fixed_point(self, rng):
        out = T.gru_forward(Tensor(rng.normal(size=(6, 3))), self._zero_params(3, 4), Tensor(np.zeros(4)))
        assert out.shape == (6, 4)
        assert np.all(out.data == 0.0)

    def test_scalar_single_step(self):
        p = {k: Tensor(np.ones((1, 1))) for k in ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh")}
        p.update({k: Tensor(np.zeros(1)) for k in ("bz", "br", "bh")})
        out = T.gru_forward(Tensor([[1.0]]), p, Tensor(np.zeros(1)))
        expected = _sig(1.0) * math.tanh(1.0)
        assert out.data[0, 0] == pytest.approx(expected, abs=1e-15)
        assert round(expected, 4) == 0.5568

    def test_two_steps_by_hand(self):
        vals = dict(Wz=0.3, Wr=-0.2, Wh=0.5, Uz=0.1, Ur=0.4, Uh=-0.6, bz=0.05, br=-0.1, bh=0.2)
        p = {k: Tensor(np.full((1,) if k.startswith("b") else (1, 1), v)) for k, v in vals.items()}
        xs = [0.7, -1.3]
        h = 0.25
        expect = []
        for x in xs:
            z = _sig(x * vals["Wz"] + h * vals["Uz"] + vals["bz"])
            r = _sig(x * vals["Wr"] + h * vals["Ur"] + vals["br"])
            hc = math.tanh(x * vals["Wh"] + r * h * vals["Uh"] + vals["bh"])
            h = (1 - z) * h + z * hc
            expect.append(h)
        out = T.gru_forward(Tensor(np.array(xs)[:, None]), p, Tensor([0.25]))
        np.testing.assert_allclose(out.data.ravel(), expect, atol=1e-15)

    def test_shape_errors(self):
        with pytest.raises(AutodiffError):
            T.gru(Tensor(np.ones((4, 2))), Tensor(np.ones((3, 6))), Tensor(np.ones((2, 6))), Tensor(np.ones(6)))
        with pytest.raises(AutodiffError, match="missing"):
            T.gru_forward(Tensor(np.ones((4, 2))), {"Wz": Tensor(np.ones((2, 2)))})

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
    def test_outputs_bounded(self, seed, scale):
        r = np.random.default_rng(seed)
        cin, h = 3, 4
        w = Tensor(r.normal(scale=scale, size=(cin, 3 * h)))
        u = Tensor(r.normal(scale=scale, size=(h, 3 * h)))
        b = Tensor(r.normal(scale=scale, size=3 * h))
        h0 = Tensor(r.uniform(-1, 1, size=h))
        out = T.gru(Tensor(r.normal(scale=scale, size=(2, 7, cin))), w, u, b, h0)
        assert np.all(np.abs(out.data) <= 1.0)


class TestBatchnorm:
    def _bn(self, x, gamma, beta, eps=1e-5, training=True):
        f = x.shape[-1]
        return T.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), np.zeros(f), np.ones(f), training,
                           eps=eps).data

    def test_constant_column_zero(self):
        out = self._bn(np.full((4, 1), 3.0), np.ones(1), np.zeros(1))
        assert np.all(out == 0.0)

    def test_population_variance(self):
        out = self._bn(np.array([[1.0], [2.0], [3.0]]), np.ones(1), np.zeros(1), eps=1e-14)
        np.testing.assert_allclose(out.ravel(), [-1.2247, 0, 1.2247], atol=1e-4)
        np.testing.assert_allclose(out.ravel(), [-math.sqrt(1.5), 0, math.sqrt(1.5)], atol=1e-9)

    def test_scale_annihilation(self, rng):
        out = self._bn(rng.normal(size=(5, 3)), np.zeros(3), np.full(3, 7.0))
        assert np.all(out == 7.0)

    def test_running_stats_update(self):
        rm, rv = np.zeros(1), np.ones(1)
        T.batchnorm(Tensor([[1.0], [3.0]]), Tensor([1.0]), Tensor([0.0]), rm, rv, True)
        assert rm[0] == pytest.approx(0.1 * 2.0)
        assert rv[0] == pytest.approx(0.9 + 0.1 * 1.0)

    def test_infer_uses_running_stats(self):
        rm, rv = np.array([2.0]), np.array([4.0])
        out = T.batchnorm(Tensor([[4.0]]), Tensor([1.0]), Tensor([0.0]), rm, rv, False, eps=1e-5)
        assert out.data[0, 0] == pytest.approx(2.0 / math.sqrt(4.0 + 1e-5))
        assert rm[0] == 2.0 and rv[0] == 4.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.floats(1e-2, 1e3))
    def test_train_mode_moments(self, seed, n, scale):
        r = np.random.default_rng(seed)
        x = r.normal(loc=r.normal(scale=scale), scale=scale, size=(n, 3))
        eps = 1e-5
        out = self._bn(x, np.ones(3), np.zeros(3), eps=eps)
        var = x.var(axis=0)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
        np.testing.assert_allclose(out.var(axis=0), var / (var + eps), atol=1e-6)


class TestTapeAndBackward:
    def test_identity_gradient(self):
        x = Tensor(2.5, requires_grad=True)
        with Tape() as tape:
            y = T.add(x, Tensor(0.0))
        backward(y, tape)
        assert x.grad == 1.0

    def test_leaf_loss(self):
        x = Tensor(2.5, requires_grad=True)
        backward(x)
        assert x.grad == 1.0

    def test_constant_function(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = T.sum_all(T.mul(x, Tensor(np.zeros(3))))
        backward(y, tape)
        assert np.all(x.grad == 0.0)

    def test_repeated_backward_doubles(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        with Tape() as tape:
            y = T.sum_all(T.tanh(T.matmul(x, w)))
        backward(y, tape)
        g1 = x.grad.copy(), w.grad.copy()
        backward(y, tape)
        np.testing.assert_allclose(x.grad, 2 * g1[0], rtol=1e-15)
        np.testing.assert_allclose(w.grad, 2 * g1[1], rtol=1e-15)

    def test_nonscalar_loss_rejected(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(AutodiffError, match="scalar"):
            backward(y, tape)

    def test_no_recording_outside_tape(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = T.sum_all(T.mul(x, x))
        with pytest.raises(AutodiffError):
            backward(y)

    def test_no_grad_suppresses(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            with T.no_grad():
                T.mul(x, x)
        assert len(tape) == 0

    def test_reset_clears_nodes(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = T.sum_all(T.mul(x, x))
        tape.reset()
        assert len(tape) == 0
        with pytest.raises(AutodiffError):
            backward(y, tape)

    def test_broadcast_gradient(self):
        a = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = T.sum_all(T.add(a, b))
        backward(y, tape)
        assert b.grad.tolist() == [3.0, 3.0]

    def test_non_finite_input_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_output_rejected(self):
        with pytest.raises(NonFiniteError):
            T.mul(Tensor([1e200]), Tensor([1e200]))

    def test_reshape_errors(self):
        with pytest.raises(AutodiffError):
            T.reshape(Tensor(np.ones(5)), (2, 3))
        assert T.reshape(Tensor(np.ones(6)), (-1, 2)).shape == (3, 2)

    def test_concat_backward_splits(self):
        a = Tensor(np.ones((2, 1)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        w = np.arange(8.0).reshape(2, 4)
        with Tape() as tape:
            y = T.sum_all(T.mul(T.concat([a, b], axis=-1), Tensor(w)))
        backward(y, tape)
        np.testing.assert_array_equal(a.grad, w[:, :1])
        np.testing.assert_array_equal(b.grad, w[:, 1:])


class TestDropoutAndSoftmax:
    def test_rate_zero_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 3)))
        assert T.dropout(x, 0.0, True, rng) is x
        assert T.dropout(x, 0.0, False, rng) is x

    def test_infer_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 3)))
        assert T.dropout(x, 0.5, False, rng) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones(200_000))
        out = T.dropout(x, 0.25, True, np.random.default_rng(0)).data
        kept = out != 0
        assert np.all(out[kept] == pytest.approx(1 / 0.75))
        assert abs(kept.mean() - 0.75) < 0.01
        assert abs(out.mean() - 1.0) < 0.01

    def test_bad_rate(self, rng):
        with pytest.raises(AutodiffError):
            T.dropout(Tensor(np.ones(2)), 1.0, True, rng)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)), elements=st.floats(-500, 500)))
    def test_softmax_rows_sum_to_one(self, logits):
        p = T.softmax(Tensor(logits)).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(p >= 0)
