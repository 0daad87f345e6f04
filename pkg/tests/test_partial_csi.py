import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from relaysense import DegenerateModelError, Hypothesis, SystemConfig
from relaysense import partial_csi as pc
from relaysense.signal_model import ChannelEstimates, make_rng, sample_frames

from conftest import crandn


def _cn_logpdf(y, mean, sigma):
    diff = y - mean
    return (-len(y) * math.log(math.pi) - np.linalg.slogdet(sigma)[1]
            - np.real(diff.conj() @ np.linalg.solve(sigma, diff)))


@pytest.fixture
def scalar():
    cfg = SystemConfig(1, 1, sigma2_v=1.0, sigma2_w=1.0, sigma2_f=1.0)
    return pc.build_dual_model(np.ones((1, 1)), np.ones(1), cfg)


def _random_instance(rng, n, m, l, sigma2_f=0.6):
    cfg = SystemConfig(n, m, frame_len=l, sigma2_v=0.5, sigma2_w=0.8, sigma2_f=sigma2_f)
    g, f = crandn(rng, l, n, m), crandn(rng, l, m)
    return cfg, g, f, pc.build_dual_model(g, f, cfg)


def _sample_statistic(cfg, g, f_bar, hyp, n, seed):
    est = ChannelEstimates(np.broadcast_to(g, (n,) + g.shape), np.broadcast_to(f_bar, (n,) + f_bar.shape))
    y = sample_frames(cfg, est, hyp, make_rng(seed)).y
    return pc.test_statistic(pc.build_dual_model(g, f_bar, cfg), y)


class TestBuild:
    def test_scalar_values(self, scalar):
        assert scalar.sigma_h0[0, 0, 0].real == pytest.approx(2.0)
        assert scalar.sigma_h1[0, 0, 0].real == pytest.approx(3.0)
        assert abs(scalar.c[0, 0, 0]) ** 2 == pytest.approx(1 / 6)
        assert scalar.c[0, 0, 0].real == pytest.approx(1 / math.sqrt(6))
        assert scalar.a[0, 0].real == pytest.approx(math.sqrt(6) / 3)

    def test_zero_channel_degenerate(self):
        cfg = SystemConfig(2, 2, sigma2_f=1.0)
        with pytest.raises(DegenerateModelError):
            pc.build_dual_model(np.zeros((2, 2)), np.ones(2), cfg)

    def test_no_f_error_degenerate(self, rng):
        with pytest.raises(DegenerateModelError, match="perfect"):
            pc.build_dual_model(crandn(rng, 2, 2), crandn(rng, 2), SystemConfig(2, 2))

    @pytest.mark.parametrize("n, m", [(2, 1), (2, 2), (3, 4), (4, 2)])
    def test_square_root_reconstruction(self, rng, n, m):
        cfg, g, f, model = _random_instance(rng, n, m, 2)
        c = model.c
        target = np.linalg.inv(model.sigma_h0) - np.linalg.inv(model.sigma_h1)
        err = np.linalg.norm(np.swapaxes(c.conj(), -1, -2) @ c - target, axis=(-2, -1))
        assert np.all(err < 1e-10 * np.linalg.norm(target, axis=(-2, -1)))
        # G of rank 1 (M = 1) gives a rank-1 difference: residual stays at rounding level
        assert model.range_residual < 1e-8


class TestStatistic:
    def test_scalar_at_zero(self, scalar):
        assert pc.test_statistic(scalar, np.zeros((1, 1))) == pytest.approx(2 / 3)

    def test_annihilation(self, rng):
        cfg, g, f, model = _random_instance(rng, 3, 2, 2)
        y = -np.einsum("lij,lj->li", model.c_pinv, model.a)
        resid = model.a - np.einsum("lij,lj->li", model.c, np.einsum("lij,lj->li", model.c_pinv, model.a))
        assert pc.test_statistic(model, y.T) == pytest.approx(np.sum(np.abs(resid) ** 2), abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), m=st.integers(1, 4), l=st.integers(1, 3))
    def test_completing_the_square(self, seed, n, m, l):
        rng = np.random.default_rng(seed)
        cfg, g, f, model = _random_instance(rng, n, m, l)
        y = crandn(rng, n, l)
        exact = sum(
            _cn_logpdf(y[:, k], model.mu[k], model.sigma_h1[k]) - _cn_logpdf(y[:, k], 0, model.sigma_h0[k])
            for k in range(l)
        )
        const = np.sum(np.abs(model.a) ** 2) + sum(
            np.real(model.mu[k].conj() @ np.linalg.solve(model.sigma_h1[k], model.mu[k])) for k in range(l)
        )
        via_statistic = -model.log_det_ratio + pc.test_statistic(model, y) - const
        assert via_statistic == pytest.approx(exact, rel=1e-8, abs=1e-8)
        assert pc.log_likelihood_ratio(model, y) == pytest.approx(exact, rel=1e-8, abs=1e-8)


class TestThreshold:
    def test_scalar(self, scalar):
        assert pc.threshold(scalar, 1.0) == pytest.approx(math.log(1.5) + 2 / 3 + 1 / 3)
        assert pc.threshold(scalar, 1.0) == pytest.approx(1.405465, abs=1e-6)

    def test_zero_mean(self, rng):
        cfg = SystemConfig(2, 2, sigma2_f=0.5)
        model = pc.build_dual_model(crandn(rng, 2, 2), np.zeros(2), cfg)
        assert np.all(model.a == 0)
        assert pc.threshold(model, 1.0) == pytest.approx(model.log_det_ratio)
        assert model.log_det_ratio > 0

    def test_equal_cost_scaling(self, rng):
        cfg, g, f, model = _random_instance(rng, 2, 2, 1)
        y = crandn(rng, 30, 2, 1)
        a = pc.decide(model, y, (0.4 / 0.6) * 2.0)
        b = pc.decide(model, y, (0.4 / 0.6) * 20.0 / 10.0)
        np.testing.assert_array_equal(a, b)


class TestWhitening:
    def test_scalar_h0(self, scalar):
        spec = pc.whiten_to_quadratic_form(scalar, Hypothesis.H0)
        np.testing.assert_allclose(spec.weights, [1 / 6, 1 / 6])
        # mean a = sqrt(6)/3 real: delta = |a|^2 / alpha for the real part
        np.testing.assert_allclose(sorted(spec.noncentrality), [0.0, (2 / 3) / (1 / 6)])
        assert spec.mean() == pytest.approx(2 / 6 + 2 / 3)

    def test_isotropic_central(self):
        # Sigma1 = 2 Sigma0 and mu = 0 give c Sigma0 c^H = I / 2 per symbol; each
        # complex coordinate splits into two real ones of variance 1/4
        n, l = 3, 2
        eye = np.broadcast_to(np.eye(n, dtype=complex), (l, n, n))
        model = pc.dual_model_from_moments(np.zeros((l, n)), 1.7 * eye, 3.4 * eye)
        cov = model.c @ model.sigma_h0 @ np.swapaxes(model.c.conj(), -1, -2)
        np.testing.assert_allclose(cov, 0.5 * eye, atol=1e-14)
        spec = pc.whiten_to_quadratic_form(model, 0)
        np.testing.assert_allclose(spec.weights, 0.25)
        assert spec.n_components == 2 * n * l
        np.testing.assert_allclose(spec.noncentrality, 0.0, atol=1e-20)

    def test_component_count(self, rng):
        cfg, g, f, model = _random_instance(rng, 3, 3, 2)
        for hyp in Hypothesis:
            spec = pc.whiten_to_quadratic_form(model, hyp)
            assert spec.n_components == 2 * 3 * 2
            assert np.all(spec.dof == 1)

    def test_rank_deficient_records_shift(self, rng):
        cfg, g, f, model = _random_instance(rng, 3, 1, 1)
        spec = pc.whiten_to_quadratic_form(model, 1)
        assert spec.n_components == 2
        assert spec.shift >= 0

    @pytest.mark.parametrize("n, m, l", [(1, 1, 1), (2, 2, 1), (3, 2, 2), (4, 4, 3)])
    def test_distributional_equivalence(self, rng, n, m, l):
        cfg, g, f, model = _random_instance(rng, n, m, l)
        for hyp in Hypothesis:
            t = _sample_statistic(cfg, g, f, hyp, 100000, seed=17 + hyp)
            spec = pc.whiten_to_quadratic_form(model, hyp)
            ref = spec.sample(make_rng(99, hyp), 100000)
            assert stats.ks_2samp(t, ref).statistic < 0.015
            se = t.std() / math.sqrt(t.size)
            assert abs(t.mean() - spec.mean()) < 4 * se


class TestQuadraticFormSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            pc.QuadraticFormSpec([1.0, -1.0], 0.0, 1)
        with pytest.raises(ValueError):
            pc.QuadraticFormSpec([1.0], [-1.0], 1)

    def test_moments(self):
        spec = pc.QuadraticFormSpec([0.5, 2.0], [1.0, 0.0], [1, 3], shift=0.25)
        assert spec.mean() == pytest.approx(0.25 + 0.5 * 2 + 2 * 3)
        assert spec.variance() == pytest.approx(2 * 0.25 * 3 + 2 * 4 * 3)
