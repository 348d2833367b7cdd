import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inkubator import mdn
from inkubator import numerics as N

J3 = 3


def raw_vector(rng, J, scale=1.0):
    return rng.normal(size=mdn.raw_size(J)) * scale


def raw_from(w, mx, my, sx, sy, r, e):
    return np.concatenate([w, mx, my, sx, sy, r, [e]]).astype(float)


def direct_density(p: mdn.MixtureParams, dx, dy):
    """Mixture density via explicit covariance inverse and determinant."""
    total = 0.0
    x = np.array([dx, dy])
    for j in range(len(p.weights)):
        cov = np.array([[p.sigma_x[j] ** 2, p.rho[j] * p.sigma_x[j] * p.sigma_y[j]],
                        [p.rho[j] * p.sigma_x[j] * p.sigma_y[j], p.sigma_y[j] ** 2]])
        d = x - np.array([p.mu_x[j], p.mu_y[j]])
        total += p.weights[j] * np.exp(-0.5 * d @ np.linalg.solve(cov, d)) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
    return total


class TestActivate:
    @pytest.mark.parametrize("b", [0.0, 0.5, 3.0])
    def test_equal_logits_uniform(self, b):
        raw = raw_from(np.full(4, 0.7), np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4), 0.0)
        np.testing.assert_allclose(mdn.activate(raw, b).weights, 0.25, atol=1e-15)

    def test_sigma_at_bias_one(self):
        raw = raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], 0.0)
        p = mdn.activate(raw, 1.0)
        assert abs(p.sigma_x[0] - 0.367879) < 1e-6 and abs(p.sigma_y[0] - 0.367879) < 1e-6

    def test_two_logits(self):
        raw = raw_from([1.0, 0.0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], 0.0)
        np.testing.assert_allclose(mdn.activate(raw, 0.0).weights, [0.73106, 0.26894], atol=1e-5)

    def test_negative_bias(self):
        with pytest.raises(ValueError):
            mdn.activate(np.zeros(mdn.raw_size(1)), -0.1)

    def test_pen_unaffected(self):
        raw = raw_vector(np.random.default_rng(0), 3)
        assert mdn.activate(raw, 0.0).pen == mdn.activate(raw, 4.0).pen

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0, 20))
    def test_always_valid(self, seed, J, b):
        raw = raw_vector(np.random.default_rng(seed), J, scale=3.0)
        mdn.activate(raw, b).validate()

    @given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0.01, 5))
    def test_monotone_in_bias(self, seed, b1, gap):
        raw = raw_vector(np.random.default_rng(seed), 4, scale=2.0)
        lo, hi = mdn.activate(raw, b1), mdn.activate(raw, b1 + gap)
        assert (hi.sigma_x < lo.sigma_x).all() and (hi.sigma_y < lo.sigma_y).all()
        assert mdn.entropy(hi.weights) <= mdn.entropy(lo.weights) + 1e-12


class TestNll:
    def test_standard_normal_at_mean(self):
        p = mdn.activate(raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], 0.0))
        pos, _ = mdn.nll(p, (0.0, 0.0, 1))
        assert abs(pos - 1.837877) < 1e-6

    def test_fair_pen(self):
        p = mdn.activate(raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], 0.0))
        assert abs(mdn.nll(p, (0.0, 0.0, 1))[1] - 0.693147) < 1e-6
        assert abs(mdn.nll(p, (0.0, 0.0, 0))[1] - 0.693147) < 1e-6

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        p = mdn.activate(raw_vector(rng, J3))
        dx, dy = rng.normal(size=2)
        pos, _ = mdn.nll(p, (dx, dy, 0))
        assert abs(pos + np.log(direct_density(p, dx, dy))) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_tensor_matches_scalar(self, seed):
        rng = np.random.default_rng(seed)
        raws = rng.normal(size=(4, mdn.raw_size(J3)))
        targets = np.column_stack([rng.normal(size=(4, 2)), rng.integers(0, 2, 4)])
        pos, pen = mdn.nll_tensor(N.Tensor(raws), targets, J3)
        for i in range(4):
            ref = mdn.nll(mdn.activate(raws[i]), targets[i])
            assert abs(pos.data[i] - ref[0]) < 1e-10 and abs(pen.data[i] - ref[1]) < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        params = {"raw": N.parameter(rng.normal(size=(5, mdn.raw_size(J3))))}
        targets = np.column_stack([rng.normal(size=(5, 2)), rng.integers(0, 2, 5)])

        def loss(p):
            pos, pen = mdn.nll_tensor(p["raw"], targets, J3)
            return N.tsum(N.add(pos, pen))

        # far components carry ~1e-8 gradients, judged on absolute error via the floor
        assert max(N.check_tensor_grads(loss, params, eps=1e-4, floor=1e-5).values()) < 1e-5

    def test_extreme_correlation_is_finite(self):
        raw = raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [40.0], 0.0)
        pos, _ = mdn.nll_tensor(N.Tensor(raw[None]), np.array([[0.1, 0.1, 1]]), 1)
        assert np.isfinite(pos.data).all()

    @pytest.mark.parametrize("seed", range(4))
    def test_integrates_to_one(self, seed):
        rng = np.random.default_rng(100 + seed)
        raw = raw_from(rng.normal(size=2), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2),
                       rng.uniform(-0.7, 0.0, 2), rng.uniform(-0.7, 0.0, 2), rng.uniform(-1, 1, 2), 0.0)
        g = np.linspace(-6, 6, 401)
        h = g[1] - g[0]
        xx, yy = np.meshgrid(g, g)
        targets = np.column_stack([xx.ravel(), yy.ravel(), np.ones(xx.size)])
        pos, _ = mdn.nll_tensor(N.Tensor(np.tile(raw, (len(targets), 1))), targets, 2)
        total = np.exp(-pos.data).sum() * h * h
        assert abs(total - 1.0) < 0.01


class TestSample:
    def test_same_state_same_draw(self):
        p = mdn.activate(raw_vector(np.random.default_rng(0), 3))
        assert mdn.sample(p, np.random.default_rng(5)) == mdn.sample(p, np.random.default_rng(5))

    def test_unit_std(self):
        p = mdn.activate(raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], 0.0))
        rng = np.random.default_rng(1)
        dx = np.array([mdn.sample(p, rng)[0] for _ in range(10000)])
        assert abs(dx.std() - 1.0) < 0.05

    def test_large_bias_collapses(self):
        raw = raw_from([2.0, 0.0], [0.5, -1.0], [0.2, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], 0.0)
        p = mdn.activate(raw, 10.0)
        rng = np.random.default_rng(2)
        draws = np.array([mdn.sample(p, rng)[:2] for _ in range(10000)])
        assert abs(draws[:, 0].std() / np.exp(-10.0) - 1.0) < 0.05
        np.testing.assert_allclose(draws.mean(axis=0), [0.5, 0.2], atol=1e-5)

    def test_correlation(self):
        raw = raw_from([0.0], [0.0], [0.0], [0.0], [np.log(2.0)], [np.arctanh(0.6)], 0.0)
        rng = np.random.default_rng(3)
        d = np.array([mdn.sample(mdn.activate(raw), rng)[:2] for _ in range(20000)])
        assert abs(np.corrcoef(d.T)[0, 1] - 0.6) < 0.02
        assert abs(d[:, 1].std() - 2.0) < 0.05

    def test_pen_rate(self):
        raw = raw_from([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], np.log(3.0))
        rng = np.random.default_rng(4)
        u = np.mean([mdn.sample(mdn.activate(raw), rng)[2] for _ in range(10000)])
        assert abs(u - 0.75) < 0.02

    def test_batched_noise_matches_single(self):
        rng = np.random.default_rng(6)
        raws = rng.normal(size=(5, mdn.raw_size(3)))
        p = mdn.activate(raws)
        u, z, e = rng.random(5), rng.standard_normal((5, 2)), rng.random(5)
        dx, dy, pen = mdn.sample_from_noise(p, u, z, e)
        for i in range(5):
            pi = mdn.activate(raws[i])
            a = mdn.sample_from_noise(pi, u[i:i + 1], z[i:i + 1], e[i:i + 1], batched=False)
            assert (a[0][0], a[1][0], a[2][0]) == (dx[i], dy[i], pen[i])
