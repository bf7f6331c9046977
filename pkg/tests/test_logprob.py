import math

import numpy as np
import pytest

from trajdiff.diffusion import DiffusionConfig
from trajdiff.errors import DomainError
from trajdiff.logprob import exact_divergence, flow, hutchinson_divergence, sample_logp
from trajdiff.models import GmmOracle


class LinearFlowDenoiser:
    """Denoiser constructed so that flow(x, sigma) = A @ x exactly.

    flow = (x - D(x)) / sigma  =>  D(x) = x - sigma * A x.
    """

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=np.float64)

    def denoise(self, x, ctx, sigma):
        return x - sigma * (x @ self.a.T)


def brute_force_divergence(x, sigma, denoiser, ctx, step=1e-6):
    """Independent oracle: central differences, one dimension at a time."""
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for j in range(x.size):
        e = np.zeros_like(x).ravel()
        e[j] = step
        e = e.reshape(x.shape)
        hi = flow(x + e, sigma, denoiser, ctx).ravel()[j]
        lo = flow(x - e, sigma, denoiser, ctx).ravel()[j]
        total += (hi - lo) / (2 * step)
    return total


class TestFlow:
    def test_fixed_point_zero_flow(self):
        class Identity:
            def denoise(self, x, ctx, sigma):
                return x

        x = np.array([1.0, -2.0])
        assert np.array_equal(flow(x, 0.5, Identity(), None), np.zeros(2))

    def test_gaussian_oracle_hand_value(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=0.5)
        out = flow(np.array([1.0]), 0.5, oracle, None)
        assert out[0] == pytest.approx(1.0, abs=1e-12)

    def test_sigma_zero_domain_error(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=0.5)
        with pytest.raises(DomainError):
            flow(np.array([1.0]), 0.0, oracle, None)


class TestExactDivergence:
    def test_linear_flow_trace(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 4))
        den = LinearFlowDenoiser(a)
        for _ in range(5):
            x = rng.normal(size=4)
            got = exact_divergence(x, 0.7, den, None)
            assert got == pytest.approx(np.trace(a), rel=1e-6)

    def test_gaussian_oracle_closed_form(self):
        # For the isotropic Gaussian oracle the flow is sigma * (x - mu) / (s^2 + sigma^2),
        # so the divergence is d * sigma / (s^2 + sigma^2); at d=2, s=sigma=0.5 that is 2.0.
        # (Verified against the independent finite-difference oracle below.)
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=0.5)
        x = np.array([0.3, -0.8])
        want = 2 * 0.5 / (0.25 + 0.25)
        brute = brute_force_divergence(x, 0.5, oracle, None)
        assert brute == pytest.approx(want, rel=1e-6)
        assert exact_divergence(x, 0.5, oracle, None) == pytest.approx(want, rel=1e-4)

    def test_agreement_with_brute_force_on_mixture(self):
        oracle = GmmOracle(weights=[0.4, 0.6], means=[[1.0, 0.5], [-0.5, -1.0]], scale=0.5)
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.uniform(-2, 2, size=2)
            sigma = rng.uniform(0.1, 3.0)
            got = exact_divergence(x, sigma, oracle, None)
            want = brute_force_divergence(x, sigma, oracle, None)
            assert got == pytest.approx(want, rel=1e-4, abs=1e-6)


class TestHutchinson:
    def test_diagonal_flow_single_probe_exact(self):
        diag = np.diag([0.5, -1.5, 2.0])
        den = LinearFlowDenoiser(diag)
        got = hutchinson_divergence(
            np.zeros(3), 1.0, den, None, np.random.default_rng(0), probes=1
        )
        assert got == pytest.approx(np.trace(diag), rel=1e-6)

    def test_seeded_determinism(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=0.5)
        x = np.array([0.5, 0.5])
        a = hutchinson_divergence(x, 0.5, oracle, None, np.random.default_rng(9), probes=64)
        b = hutchinson_divergence(x, 0.5, oracle, None, np.random.default_rng(9), probes=64)
        assert a == b

    def test_variance_shrinks_with_probes(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(6, 6))  # dense: off-diagonal terms give probe variance
        den = LinearFlowDenoiser(a)
        x = np.zeros(6)

        def std_at(probes, reps=60):
            vals = [
                hutchinson_divergence(x, 1.0, den, None, np.random.default_rng(1000 + r), probes)
                for r in range(reps)
            ]
            return np.std(vals)

        assert std_at(400) < 0.55 * std_at(100)

    def test_unbiased_against_exact(self):
        oracle = GmmOracle(weights=[0.5, 0.5], means=[[1.0, 0.0], [-1.0, 0.0]], scale=0.5)
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.uniform(-1.5, 1.5, size=2)
            sigma = rng.uniform(0.2, 2.0)
            exact = exact_divergence(x, sigma, oracle, None)
            probes = 1000
            probe_vals = [
                hutchinson_divergence(x, sigma, oracle, None, np.random.default_rng(i), 1)
                for i in range(200)
            ]
            est = hutchinson_divergence(x, sigma, oracle, None, np.random.default_rng(0), probes)
            se = np.std(probe_vals) / math.sqrt(probes)
            assert abs(est - exact) <= max(3 * se, 1e-9)


class TestSampleLogp:
    def test_standard_gaussian_origin(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=1.0)
        result = sample_logp(np.zeros(2), oracle, None, DiffusionConfig())
        assert result.logp == pytest.approx(-math.log(2 * math.pi), abs=2e-2)
        assert result.estimator == "exact"
        assert result.probes is None
        assert result.logp == pytest.approx(result.prior_logp - result.divergence_integral, abs=1e-12)

    def test_half_scale_gaussian(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=0.5)
        result = sample_logp(np.zeros(1), oracle, None, DiffusionConfig())
        assert result.logp == pytest.approx(-0.5 * math.log(2 * math.pi * 0.25), abs=2e-2)

    def test_two_mode_symmetry(self):
        oracle = GmmOracle(weights=[0.5, 0.5], means=[[1.2], [-1.2]], scale=0.5)
        cfg = DiffusionConfig()
        x = np.array([0.7])
        a = sample_logp(x, oracle, None, cfg)
        b = sample_logp(-x, oracle, None, cfg)
        assert a.logp == pytest.approx(b.logp, abs=1e-6)

    def test_monotone_ranking_with_distance(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=0.5)
        cfg = DiffusionConfig()
        logps = [
            sample_logp(np.array([r, 0.0]), oracle, None, cfg).logp
            for r in (0.0, 0.4, 0.8, 1.2, 1.6)
        ]
        assert all(a > b for a, b in zip(logps, logps[1:]))

    def test_normalization_1d(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.2]], scale=0.5)
        cfg = DiffusionConfig()
        grid = np.linspace(-3.0, 3.5, 81)
        values = [math.exp(sample_logp(np.array([g]), oracle, None, cfg).logp) for g in grid]
        mass = np.trapezoid(values, grid)
        assert mass == pytest.approx(1.0, abs=0.02)

    def test_hutchinson_estimator_wired_through(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=1.0)
        result = sample_logp(
            np.zeros(2),
            oracle,
            None,
            DiffusionConfig(),
            estimator="hutchinson",
            probes=32,
            rng=np.random.default_rng(0),
        )
        assert result.estimator == "hutchinson"
        assert result.probes == 32
        # isotropic flow has a diagonal Jacobian: the estimate is exact
        assert result.logp == pytest.approx(-math.log(2 * math.pi), abs=2e-2)

    def test_hutchinson_requires_rng(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=1.0)
        with pytest.raises(ValueError):
            sample_logp(np.zeros(1), oracle, None, DiffusionConfig(), estimator="hutchinson")
