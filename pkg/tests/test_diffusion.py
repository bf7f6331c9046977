import math

import numpy as np
import pytest

from trajdiff.diffusion import (
    DiffusionConfig,
    c_noise,
    heun_sample,
    ode_drift,
    precondition_coeffs,
    sample_training_noise,
    score_from_denoiser,
    step_schedule,
    wrap_denoiser,
)
from trajdiff.errors import DomainError
from trajdiff.models import GmmOracle


def supplement_coeffs(sigma, sigma_data):
    # the reference formulas, written out independently of the implementation
    c_in = 1.0 / math.sqrt(sigma**2 + sigma_data**2)
    c_skip = sigma_data**2 / (sigma**2 + sigma_data**2)
    c_out = sigma * sigma_data / math.sqrt(sigma**2 + sigma_data**2)
    c_n = 0.25 * math.log(sigma)
    return c_skip, c_in, c_out, c_n


class TestPreconditioning:
    def test_zero_noise_reduces_to_identity(self):
        co = precondition_coeffs(0.0, 0.5)
        assert co.c_skip == pytest.approx(1.0)
        assert co.c_out == 0.0

    def test_c_noise_zero_at_sigma_one(self):
        assert precondition_coeffs(1.0, 0.5).c_noise == 0.0

    def test_half_sigma_values(self):
        co = precondition_coeffs(0.5, 0.5)
        assert co.c_in == pytest.approx(math.sqrt(2.0), abs=1e-12)
        assert co.c_skip == pytest.approx(0.5, abs=1e-12)
        assert co.c_out == pytest.approx(0.5 / math.sqrt(2.0), abs=1e-12)

    def test_c_noise_at_zero_is_domain_error(self):
        with pytest.raises(DomainError):
            _ = precondition_coeffs(0.0, 0.5).c_noise
        with pytest.raises(DomainError):
            c_noise(0.0)

    @pytest.mark.parametrize("sigma", [0.1, 0.5, 2.0, 80.0])
    def test_matches_reference_formulas(self, sigma):
        co = precondition_coeffs(sigma, 0.5)
        ref_skip, ref_in, ref_out, ref_noise = supplement_coeffs(sigma, 0.5)
        assert abs(co.c_skip - ref_skip) < 1e-12
        assert abs(co.c_in - ref_in) < 1e-12
        assert abs(co.c_out - ref_out) < 1e-12
        assert abs(co.c_noise - ref_noise) < 1e-12

    def test_input_variance_is_unit(self):
        # analytically Var(c_in * x) = 1 for x with variance sigma_d^2 + sigma^2
        rng = np.random.default_rng(0)
        sigma, sigma_data = 2.0, 0.5
        x = rng.normal(0, sigma_data, 200_000) + rng.normal(0, sigma, 200_000)
        scaled = precondition_coeffs(sigma, sigma_data).c_in * x
        assert scaled.var() == pytest.approx(1.0, rel=0.05)


class TestWrapDenoiser:
    def test_zero_network_gives_skip_path(self):
        cfg = DiffusionConfig()
        d = wrap_denoiser(lambda x, c, cn: np.zeros_like(x), cfg)
        x = np.array([1.0, -2.0])
        out = d.denoise(x, None, 0.7)
        assert np.allclose(out, precondition_coeffs(0.7, cfg.sigma_data).c_skip * x)

    def test_small_sigma_limit_is_identity(self):
        cfg = DiffusionConfig()
        d = wrap_denoiser(lambda x, c, cn: np.zeros_like(x), cfg)
        x = np.array([1.0, -2.0])
        assert np.allclose(d.denoise(x, None, 1e-8), x, atol=1e-12)

    def test_oracle_identity_roundtrip(self):
        # Express the oracle as a raw network; wrapping must reproduce it.
        cfg = DiffusionConfig()
        oracle = GmmOracle(weights=[0.4, 0.6], means=[[0.5, -0.3], [-1.0, 0.8]], scale=0.5)

        def raw_net(x_scaled, ctx, cn):
            sigma = math.exp(4.0 * cn)
            co = precondition_coeffs(sigma, cfg.sigma_data)
            x = x_scaled / co.c_in
            return (oracle.denoise(x, None, sigma) - co.c_skip * x) / co.c_out

        wrapped = wrap_denoiser(raw_net, cfg)
        rng = np.random.default_rng(1)
        for sigma in (0.1, 0.5, 2.0, 10.0):
            x = rng.normal(size=(5, 2))
            assert np.allclose(wrapped.denoise(x, None, sigma), oracle.denoise(x, None, sigma), atol=1e-10)


class TestScore:
    def test_fixed_point_is_zero_score(self):
        x = np.ones(4)
        assert np.array_equal(score_from_denoiser(x, x, 0.5), np.zeros(4))

    def test_unit_offset_at_half_sigma(self):
        x = np.zeros(3)
        assert np.allclose(score_from_denoiser(x + 1.0, x, 0.5), 4.0)

    def test_matches_analytic_gaussian_score(self):
        mu, s = np.array([0.3, -0.7]), 0.5
        oracle = GmmOracle(weights=[1.0], means=[mu], scale=s)
        rng = np.random.default_rng(2)
        for sigma in (0.2, 1.0, 5.0):
            x = rng.normal(size=(7, 2))
            got = score_from_denoiser(oracle.denoise(x, None, sigma), x, sigma)
            want = -(x - mu) / (s**2 + sigma**2)
            assert np.allclose(got, want, atol=1e-8)

    def test_sigma_zero_is_domain_error(self):
        with pytest.raises(DomainError):
            score_from_denoiser(np.zeros(2), np.zeros(2), 0.0)


class TestTrainingNoise:
    def test_seeded_determinism(self):
        cfg = DiffusionConfig()
        a = sample_training_noise(np.random.default_rng(5), cfg, size=10)
        b = sample_training_noise(np.random.default_rng(5), cfg, size=10)
        assert np.array_equal(a, b)

    def test_lognormal_median(self):
        cfg = DiffusionConfig()
        draws = sample_training_noise(np.random.default_rng(0), cfg, size=100_000)
        assert np.median(draws) == pytest.approx(math.exp(-1.2), abs=0.02)

    def test_clamped_to_range(self):
        cfg = DiffusionConfig(p_std=6.0)  # fat distribution to hit both clamps
        draws = sample_training_noise(np.random.default_rng(1), cfg, size=50_000)
        assert draws.min() >= cfg.sigma_min
        assert draws.max() <= cfg.sigma_max
        assert (draws == cfg.sigma_min).any() and (draws == cfg.sigma_max).any()


class TestSchedule:
    def test_endpoints(self):
        grid = step_schedule(DiffusionConfig())
        assert grid[0] == 80.0
        assert grid[-1] == 0.0
        assert len(grid) == 33

    def test_strictly_decreasing(self):
        for steps in (2, 8, 32, 100):
            grid = step_schedule(DiffusionConfig(num_steps=steps))
            assert np.all(np.diff(grid) < 0)

    def test_hand_computed_small_grid(self):
        grid = step_schedule(DiffusionConfig(sigma_min=1.0, sigma_max=3.0, rho=1.0, num_steps=2))
        assert np.allclose(grid, [3.0, 1.0, 0.0])


class TestHeunSampler:
    def test_seeded_determinism(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.7, 0.7]], scale=0.5)
        cfg = DiffusionConfig()
        a = heun_sample(oracle, None, np.random.default_rng(3), cfg, shape=(10, 2))
        b = heun_sample(oracle, None, np.random.default_rng(3), cfg, shape=(10, 2))
        assert np.array_equal(a, b)

    def test_gaussian_moments(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.7, 0.7]], scale=0.5)
        cfg = DiffusionConfig()
        samples = heun_sample(oracle, None, np.random.default_rng(0), cfg, shape=(2000, 2))
        assert np.allclose(samples.mean(axis=0), 0.7, atol=0.05)
        assert np.allclose(samples.std(axis=0), 0.5, atol=0.05)

    def test_two_mode_split(self):
        mu = 1.5
        oracle = GmmOracle(weights=[0.5, 0.5], means=[[-mu], [mu]], scale=0.3)
        samples = heun_sample(oracle, None, np.random.default_rng(1), DiffusionConfig(), shape=(2000, 1))
        frac = (np.abs(samples - mu) < np.abs(samples + mu)).mean()
        assert frac == pytest.approx(0.5, abs=0.04)

    def test_wasserstein_shrinks_with_steps(self):
        # paired seeds isolate the discretization error across step counts
        from scipy.stats import norm

        oracle = GmmOracle(weights=[1.0], means=[[0.7]], scale=0.5)
        n = 5000
        dists = []
        for steps in (8, 16, 32):
            cfg = DiffusionConfig(num_steps=steps)
            samples = np.sort(heun_sample(oracle, None, np.random.default_rng(7), cfg, shape=(n, 1)).ravel())
            quantiles = norm.ppf((np.arange(n) + 0.5) / n, loc=0.7, scale=0.5)
            dists.append(np.abs(samples - quantiles).mean())
        assert dists[0] > dists[1] > dists[2]

    def test_guidance_hook_is_applied_every_evaluation(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=0.5)
        cfg = DiffusionConfig(num_steps=8)
        calls = []

        def guide(x, sigma):
            calls.append(sigma)
            return np.zeros_like(x)

        heun_sample(oracle, None, np.random.default_rng(0), cfg, shape=(3, 1), guidance=guide)
        # 2 evaluations per step except the final Euler-only step
        assert len(calls) == 2 * cfg.num_steps - 1

    def test_zero_guidance_bit_identical(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0, 0.0]], scale=0.5)
        cfg = DiffusionConfig(num_steps=8)
        a = heun_sample(oracle, None, np.random.default_rng(2), cfg, shape=(5, 2))
        b = heun_sample(
            oracle,
            None,
            np.random.default_rng(2),
            cfg,
            shape=(5, 2),
            guidance=lambda x, s: np.zeros_like(x),
        )
        assert np.array_equal(a, b)

    def test_drift_shared_with_flow(self):
        from trajdiff.logprob import flow

        oracle = GmmOracle(weights=[1.0], means=[[0.2, -0.4]], scale=0.5)
        x = np.random.default_rng(4).normal(size=(6, 2))
        assert np.array_equal(ode_drift(x, 0.8, oracle, None), flow(x, 0.8, oracle, None))


def test_config_validation():
    with pytest.raises(ValueError):
        DiffusionConfig(sigma_min=1.0, sigma_max=0.5)
    with pytest.raises(ValueError):
        DiffusionConfig(num_steps=1)
    with pytest.raises(ValueError):
        DiffusionConfig(sigma_data=0.0)
