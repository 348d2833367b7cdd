import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inkubator import numerics as N
from inkubator.numerics import checkpoint, layers
from inkubator.numerics import Tensor


def vec(n, lo=-2.0, hi=2.0):
    return mats((n,), lo, hi)


def mats(shape, lo=-2.0, hi=2.0):
    """Random inputs: normal draws (seeded by hypothesis) clipped to [lo, hi]."""
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    return st.integers(0, 2**32 - 1).map(
        lambda s: np.clip(mid + half / 2 * np.random.default_rng(s).normal(size=shape), lo, hi))


def extreme(shape, bound):
    return arrays(np.float64, shape, elements=st.floats(-bound, bound, allow_nan=False))


def analytic(fn, x):
    t = Tensor(np.array(x, dtype=float), requires_grad=True)
    N.backward(fn(t), [t])
    return t.grad


def check_smooth(fn, x, tol=1e-6, eps=1e-5):
    """Finite-difference check at points where no gradient entry is tiny."""
    g = analytic(fn, x)
    assume(np.min(np.abs(g)) > 1e-3)
    assert N.grad_check(fn, x, eps) < tol


WEIGHTS = np.linspace(0.5, 1.5, 12)


def weighted(f):
    return lambda t: N.tsum(N.mul(f(t), WEIGHTS[: t.shape[-1]]))


class TestExamples:
    def test_product(self):
        x, y = N.parameter(2.0), N.parameter(3.0)
        loss, grads = N.forward_backward(lambda p: N.mul(p["x"], p["y"]), {"x": x, "y": y})
        assert loss == 6.0
        assert grads["x"] == 3.0 and grads["y"] == 2.0

    def test_tanh_at_zero(self):
        np.testing.assert_array_equal(analytic(lambda t: N.tsum(N.tanh(t)), np.zeros(5)), np.ones(5))

    def test_three_layer_composite(self):
        rng = np.random.default_rng(42)
        params = {
            "W1": N.parameter(rng.normal(size=(4, 6)) * 0.5), "b1": N.parameter(rng.normal(size=6) * 0.1),
            "W2": N.parameter(rng.normal(size=(6, 5)) * 0.5), "b2": N.parameter(rng.normal(size=5) * 0.1),
            "W3": N.parameter(rng.normal(size=(5, 3)) * 0.5),
        }
        x = rng.normal(size=(7, 4))
        labels = rng.integers(0, 3, size=7)

        def loss(p):
            h1 = N.tanh(N.add(N.matmul(x, p["W1"]), p["b1"]))
            h2 = N.sigmoid(N.add(N.matmul(h1, p["W2"]), p["b2"]))
            logp = N.log_softmax(N.matmul(h2, p["W3"]), axis=-1)
            return N.neg(N.mean(N.take(N.reshape(logp, (21,)), np.arange(7) * 3 + labels)))

        errs = N.check_tensor_grads(loss, params, eps=1e-5)
        assert max(errs.values()) < 1e-6

    def test_quadratic(self):
        assert N.grad_check(lambda t: N.tsum(N.square(t)), np.array([3.0]), 1e-5) < 1e-8

    def test_logsumexp_vector(self):
        x = np.random.default_rng(0).normal(size=10)
        assert N.grad_check(lambda t: N.logsumexp(t, axis=-1), x) < 1e-6

    def test_abs_at_kink_is_reported(self):
        assert N.grad_check(lambda t: N.tsum(N.abs_(t)), np.array([0.0])) > 0.5


class TestErrors:
    def test_non_scalar_loss(self):
        with pytest.raises(N.ShapeError):
            N.forward_backward(lambda p: N.mul(p["x"], 2.0), {"x": N.parameter(np.ones(3))})

    def test_shape_mismatch(self):
        with pytest.raises((N.ShapeError, ValueError)):
            N.matmul(N.parameter(np.ones((2, 3))), N.parameter(np.ones((2, 3))))

    def test_non_finite(self):
        with pytest.raises(N.NonFiniteError):
            N.log(N.parameter(np.array([0.0, 1.0])))
        with pytest.raises(N.NonFiniteError):
            N.div(N.parameter(1.0), N.parameter(0.0))

    def test_graph_rerunnable(self):
        x = N.parameter(np.array([0.3, -0.2]))
        loss = N.tsum(N.exp(N.mul(x, x)))
        g1 = N.backward(loss, [x])[id(x)].copy()
        g2 = N.backward(loss, [x])[id(x)]
        np.testing.assert_array_equal(g1, g2)

    def test_no_grad_records_nothing(self):
        x = N.parameter(np.ones(2))
        with N.no_grad():
            y = N.tanh(x)
        assert not y.requires_grad
        assert N.grad_enabled()


class TestPrimitiveGradients:
    @given(vec(6))
    def test_tanh(self, x):
        check_smooth(weighted(N.tanh), x)

    @given(vec(6))
    def test_sigmoid(self, x):
        check_smooth(weighted(N.sigmoid), x)

    @given(vec(6))
    def test_exp(self, x):
        check_smooth(weighted(N.exp), x)

    @given(vec(6, 0.1, 5.0))
    def test_log(self, x):
        check_smooth(weighted(N.log), x)

    @given(vec(6))
    def test_softplus(self, x):
        check_smooth(weighted(N.softplus), x)

    @given(vec(6))
    def test_square(self, x):
        check_smooth(weighted(N.square), x)

    @given(vec(6), vec(6))
    def test_mul_add_sub_div(self, x, y):
        assume(np.min(np.abs(y)) > 0.2)
        check_smooth(weighted(lambda t: N.mul(t, y)), x)
        check_smooth(weighted(lambda t: N.add(N.mul(t, t), y)), x + 0.01)
        check_smooth(weighted(lambda t: N.sub(y, N.mul(t, t))), x + 0.01)
        check_smooth(weighted(lambda t: N.div(t, y)), x)
        check_smooth(weighted(lambda t: N.div(y, N.add(N.square(t), 1.0))), x)

    @given(mats((3, 4)), mats((4, 5)))
    def test_matmul(self, a, b):
        check_smooth(lambda t: N.tsum(N.square(N.matmul(t, b))), a)
        check_smooth(lambda t: N.tsum(N.square(N.matmul(a, t))), b)

    @given(mats((3, 4)))
    def test_softmax(self, x):
        w = np.arange(12.0).reshape(3, 4)
        check_smooth(lambda t: N.tsum(N.mul(N.softmax(t, axis=-1), w)), x, tol=1e-6)

    @given(mats((3, 4)))
    def test_log_softmax(self, x):
        w = np.arange(1.0, 13.0).reshape(3, 4)
        check_smooth(lambda t: N.tsum(N.mul(N.log_softmax(t, axis=-1), w)), x)

    @given(mats((3, 4)))
    def test_logsumexp_axes(self, x):
        check_smooth(lambda t: N.tsum(N.mul(N.logsumexp(t, axis=0), np.array([1.0, 2, 3, 4]))), x)
        check_smooth(lambda t: N.tsum(N.mul(N.logsumexp(t, axis=1), np.array([1.0, 2, 3]))), x)

    @given(mats((3, 4)))
    def test_concat_slice_sum_mean(self, x):
        check_smooth(lambda t: N.tsum(N.square(N.concat([t[:, :2], N.mul(t[:, 2:], 3.0)], axis=1))), x)
        check_smooth(lambda t: N.mul(N.mean(N.exp(t)), 5.0), x)
        check_smooth(lambda t: N.tsum(N.exp(N.tsum(t, axis=0))), x)

    @given(mats((2, 3)))
    def test_stack_transpose_reshape(self, x):
        check_smooth(lambda t: N.tsum(N.exp(N.reshape(N.transpose(N.stack([t, N.mul(t, 2.0)], axis=0)), (12,)))), x)

    @given(mats((2, 7, 3)))
    def test_conv1d(self, x):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=2)
        for stride in (1, 2):
            check_smooth(lambda t: N.tsum(N.square(N.conv1d(t, w, b, stride))), x, tol=1e-5)
        params = {"w": N.parameter(w), "b": N.parameter(b)}
        errs = N.check_tensor_grads(lambda p: N.tsum(N.square(N.conv1d(x, p["w"], p["b"], 2))), params,
                                    floor=1e-4)
        assert max(errs.values()) < 1e-6

    def test_conv1d_output_length(self):
        for T in range(1, 9):
            for stride in (1, 2, 3):
                out = N.conv1d(np.ones((1, T, 2)), np.ones((3, 2, 1)), np.zeros(1), stride)
                assert out.shape == (1, -(-T // stride), 1)

    def test_lstm_step_matches_unfused(self):
        rng = np.random.default_rng(0)
        params = {}
        layers.init_lstm(params, "l", 3, 4, rng)
        x = rng.normal(size=(2, 3))
        h, c = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        xw = N.add(N.matmul(x, params["l.Wx"]), params["l.b"])
        fused = N.lstm_step(xw, np.concatenate([h, c], 1), params["l.Wh"]).data
        h2, c2 = layers.lstm_cell(params, "l", xw, Tensor(h), Tensor(c))
        np.testing.assert_allclose(fused, np.concatenate([h2.data, c2.data], 1), atol=1e-14)

    def test_lstm_sequence_masked_gradients(self):
        rng = np.random.default_rng(3)
        params = {}
        layers.init_bilstm(params, "b", 2, 3, rng)
        x = rng.normal(size=(2, 5, 2))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
        w = rng.normal(size=(2, 5, 6))
        errs = N.check_tensor_grads(lambda p: N.tsum(N.mul(layers.bilstm(p, "b", x, mask), w)), params,
                                    eps=1e-6, floor=1e-4)
        assert max(errs.values()) < 1e-6

    def test_padding_matches_unpadded(self):
        rng = np.random.default_rng(4)
        params = {}
        layers.init_lstm(params, "l", 2, 3, rng)
        x = rng.normal(size=(1, 5, 2))
        alone = layers.lstm_sequence(params, "l", x[:, :3], reverse=True).data
        padded = layers.lstm_sequence(params, "l", np.concatenate([x[:, :3], x[:, :2] * 0 + 9], 1),
                                      np.array([[1, 1, 1, 0, 0]], bool), reverse=True).data
        np.testing.assert_allclose(padded[:, :3], alone, atol=1e-14)
        assert (padded[:, 3:] == 0).all()


class TestStability:
    @given(extreme((4, 7), 1e3))
    def test_softmax_rows(self, x):
        s = N.softmax(Tensor(x), axis=-1).data
        assert np.isfinite(s).all()
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12, rtol=0)

    @given(extreme((4, 7), 1e3))
    def test_logsumexp_no_overflow(self, x):
        v = N.logsumexp(Tensor(x), axis=-1).data
        assert np.isfinite(v).all()
        assert (v >= x.max(axis=-1) - 1e-9).all()
        assert (v <= x.max(axis=-1) + np.log(7) + 1e-9).all()

    def test_bit_identical(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        r1 = N.softmax(N.matmul(a, b)).data
        r2 = N.softmax(N.matmul(a, b)).data
        assert r1.tobytes() == r2.tobytes()


class TestAdam:
    def test_zero_grads(self):
        p = {"w": N.parameter(np.array([1.0, -2.0]))}
        N.adam_step(p, {"w": np.zeros(2)}, N.AdamState(), N.AdamHyper())
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    @given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    def test_first_step_is_signed_lr(self, g):
        p = {"w": N.parameter(np.array([0.5]))}
        N.adam_step(p, {"w": np.array([g])}, N.AdamState(), N.AdamHyper(lr=1e-3, eps=0.0, clip_norm=None))
        assert abs(p["w"].data[0] - (0.5 - 1e-3 * np.sign(g))) < 1e-12

    def test_first_step_default_eps(self):
        p = {"w": N.parameter(np.array([0.0]))}
        N.adam_step(p, {"w": np.array([2.0])}, N.AdamState(), N.AdamHyper())
        assert abs(p["w"].data[0] + 1e-3) < 1e-11

    def test_clipping(self):
        g = {"a": np.full(4, 30.0), "b": np.array([40.0, 0.0])}
        scale = 100.0 / np.sqrt(4 * 900 + 1600)
        g = {k: v * scale for k, v in g.items()}
        clipped, norm = N.clip_by_global_norm(g, 5.0)
        assert abs(norm - 100.0) < 1e-9
        total = np.sqrt(sum(float((v * v).sum()) for v in clipped.values()))
        assert abs(total - 5.0) < 1e-9

    def test_below_threshold_untouched(self):
        g = {"a": np.array([3.0, 4.0])}
        clipped, norm = N.clip_by_global_norm(g, 5.0)
        assert norm == 5.0 and clipped["a"] is g["a"]

    def test_non_finite_grad(self):
        p = {"w": N.parameter(np.zeros(1))}
        with pytest.raises(N.NonFiniteError):
            N.adam_step(p, {"w": np.array([np.nan])}, N.AdamState(), N.AdamHyper())

    def test_minimizes_quadratic(self):
        p = {"w": N.parameter(np.array([3.0, -2.0]))}
        state, hyper = N.AdamState(), N.AdamHyper(lr=0.05)
        for _ in range(500):
            _, g = N.forward_backward(lambda q: N.tsum(N.square(q["w"])), p)
            N.adam_step(p, g, state, hyper)
        assert np.abs(p["w"].data).max() < 1e-2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=5), "s": np.array(1.5)}
        path = tmp_path / "x.ckpt"
        checkpoint.save(path, tensors, {"kind": "test"})
        back, meta = checkpoint.load(path)
        assert meta == {"kind": "test"}
        for k, v in tensors.items():
            assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()

    def test_layout(self):
        blob = checkpoint.dumps({"w": np.array([1.0, 2.0])})
        assert blob[:8] == b"INKCKPT1"
        n = int.from_bytes(blob[8:16], "little")
        assert blob[16 + n:] == np.array([1.0, 2.0], "<f8").tobytes()

    def test_order_independent(self):
        a = checkpoint.dumps({"x": np.ones(2), "y": np.zeros(1)})
        b = checkpoint.dumps({"y": np.zeros(1), "x": np.ones(2)})
        assert a == b

    def test_bad_magic(self):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(b"NOTACKPT" + bytes(8))

    def test_truncated(self):
        blob = checkpoint.dumps({"w": np.arange(10.0)})
        for cut in (4, 12, 20, len(blob) - 1):
            with pytest.raises(checkpoint.CheckpointError):
                checkpoint.loads(blob[:cut])
