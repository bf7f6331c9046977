import copy
import itertools
import math

import numpy as np
import pytest

from trajdiff import tensor as T
from trajdiff.diffusion import DiffusionConfig, c_noise
from trajdiff.errors import DataError, DomainError, ShapeError
from trajdiff.models import (
    AdamW,
    GmmOracle,
    SetDenoiser,
    SetDenoiserConfig,
    load_checkpoint,
    make_fourier_freqs,
    noise_embedding,
    save_checkpoint,
    train_step,
    training_loss,
)


def analytic_gmm_score(oracle: GmmOracle, x: np.ndarray, sigma: float) -> np.ndarray:
    """Independent closed form: grad log sum_k w_k N(x; mu_k, (s^2+sigma^2) I)."""
    var = oracle.scale**2 + sigma**2
    diff = x[..., None, :] - oracle.means  # (..., K, d)
    logw = np.log(oracle.weights) - 0.5 * (diff * diff).sum(-1) / var
    logw -= logw.max(axis=-1, keepdims=True)
    resp = np.exp(logw)
    resp /= resp.sum(axis=-1, keepdims=True)
    return -(x - resp @ oracle.means) / var


class TestGmmOracle:
    def test_zero_sigma_is_identity(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.3, 0.4]], scale=0.5)
        x = np.array([[1.0, 2.0]])
        assert np.array_equal(oracle.denoise(x, None, 0.0), x)

    def test_single_mode_hand_value(self):
        oracle = GmmOracle(weights=[1.0], means=[[0.0]], scale=0.5)
        out = oracle.denoise(np.array([1.0]), None, 0.5)
        assert out[0] == pytest.approx(0.5, abs=1e-14)

    def test_symmetric_two_mode_midpoint(self):
        oracle = GmmOracle(weights=[0.5, 0.5], means=[[1.0], [-1.0]], scale=0.5)
        assert oracle.denoise(np.array([0.0]), None, 0.8)[0] == pytest.approx(0.0, abs=1e-14)

    def test_matches_score_identity(self):
        # D(x; sigma) == x + sigma^2 * grad log p(x; sigma), on random points
        oracle = GmmOracle(weights=[0.2, 0.5, 0.3], means=[[1, 0], [-1, 1], [0, -2]], scale=0.5)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.uniform(-2, 2, size=2)
            sigma = rng.uniform(0.05, 5.0)
            want = x + sigma**2 * analytic_gmm_score(oracle, x, sigma)
            assert np.allclose(oracle.denoise(x, None, sigma), want, atol=1e-10)

    def test_contracts_to_prior_mean_at_large_sigma(self):
        oracle = GmmOracle(weights=[0.3, 0.7], means=[[1.5, 0.0], [-0.5, 1.0]], scale=0.5)
        prior_mean = oracle.weights @ oracle.means
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=2)
            assert np.linalg.norm(oracle.denoise(x, None, 80.0) - prior_mean) < 1e-3

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GmmOracle(weights=[0.5, 0.4], means=[[0.0], [1.0]], scale=0.5)

    def test_logpdf_is_normalized_1d(self):
        oracle = GmmOracle(weights=[0.6, 0.4], means=[[0.5], [-1.0]], scale=0.5)
        grid = np.linspace(-8, 8, 4001)[:, None]
        mass = np.trapezoid(np.exp(oracle.logpdf(grid, sigma=0.3)), grid.ravel())
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestNoiseEmbedding:
    def test_shape_and_range(self):
        freqs = make_fourier_freqs(32, np.random.default_rng(0))
        emb = noise_embedding(0.5, freqs)
        assert emb.shape == (64,)
        assert np.all(np.abs(emb) <= 1.0)

    def test_deterministic_for_fixed_freqs(self):
        freqs = make_fourier_freqs(16, np.random.default_rng(1))
        assert np.array_equal(noise_embedding(2.0, freqs), noise_embedding(2.0, freqs))

    def test_sigma_zero_is_domain_error(self):
        freqs = make_fourier_freqs(8, np.random.default_rng(2))
        with pytest.raises(DomainError):
            noise_embedding(0.0, freqs)

    def test_cos_sin_structure(self):
        freqs = np.array([0.3, -1.2])
        u = c_noise(1.7)
        want = np.array(
            [math.cos(2 * math.pi * 0.3 * u), math.cos(2 * math.pi * -1.2 * u),
             math.sin(2 * math.pi * 0.3 * u), math.sin(2 * math.pi * -1.2 * u)]
        )
        assert np.allclose(noise_embedding(1.7, freqs), want)


def random_inputs(rng, n_a, cfg: SetDenoiserConfig):
    s = rng.normal(size=(n_a, cfg.d_in))
    ctx = rng.normal(size=(n_a, cfg.n_ctx_tokens, cfg.d_ctx))
    return s, ctx


def random_net(cfg: SetDenoiserConfig, seed: int) -> SetDenoiser:
    """A denoiser whose output projection is NOT the zero training init,
    so outputs genuinely depend on the inputs."""
    net = SetDenoiser(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    net.params["out.w"].data = rng.normal(0, 0.1, size=net.params["out.w"].data.shape)
    net.params["out.b"].data = rng.normal(0, 0.1, size=net.params["out.b"].data.shape)
    return net


class TestSetDenoiser:
    def test_exhaustive_equivariance_small(self):
        cfg = SetDenoiserConfig(d_in=6)
        net = random_net(cfg, seed=3)
        rng = np.random.default_rng(0)
        for n_a in (2, 3, 4):
            s, ctx = random_inputs(rng, n_a, cfg)
            base = net(s, ctx, 0.4)
            for perm in itertools.permutations(range(n_a)):
                p = np.array(perm)
                out = net(s[p], ctx[p], 0.4)
                assert np.allclose(out, base[p], atol=1e-9)

    def test_random_permutations_eight_agents(self):
        cfg = SetDenoiserConfig(d_in=6)
        net = random_net(cfg, seed=4)
        rng = np.random.default_rng(5)
        s, ctx = random_inputs(rng, 8, cfg)
        base = net(s, ctx, 1.3)
        for _ in range(20):
            p = rng.permutation(8)
            assert np.allclose(net(s[p], ctx[p], 1.3), base[p], atol=1e-9)

    def test_single_agent_finite(self):
        cfg = SetDenoiserConfig(d_in=6)
        net = random_net(cfg, seed=6)
        s, ctx = random_inputs(np.random.default_rng(1), 1, cfg)
        out = net(s, ctx, 0.2)
        assert out.shape == (1, 6)
        assert np.all(np.isfinite(out))

    def test_no_self_attention_gives_independence(self):
        cfg = SetDenoiserConfig(d_in=6, self_attention=False)
        net = random_net(cfg, seed=7)
        rng = np.random.default_rng(2)
        s, ctx = random_inputs(rng, 3, cfg)
        base = net(s, ctx, 0.9)
        s2 = s.copy()
        s2[2] += rng.normal(size=6)  # perturb agent 2 only
        out = net(s2, ctx, 0.9)
        assert np.array_equal(out[0], base[0])
        assert np.array_equal(out[1], base[1])
        assert not np.allclose(out[2], base[2])

    def test_with_self_attention_agents_interact(self):
        cfg = SetDenoiserConfig(d_in=6, self_attention=True)
        net = random_net(cfg, seed=7)
        rng = np.random.default_rng(2)
        s, ctx = random_inputs(rng, 3, cfg)
        base = net(s, ctx, 0.9)
        s2 = s.copy()
        s2[2] += rng.normal(size=6)
        assert not np.array_equal(net(s2, ctx, 0.9)[0], base[0])

    def test_zero_agents_rejected(self):
        cfg = SetDenoiserConfig(d_in=6)
        net = SetDenoiser(cfg, seed=0)
        with pytest.raises(ShapeError):
            net(np.zeros((0, 6)), np.zeros((0, 4, 32)), 0.5)

    def test_agent_count_mismatch_rejected(self):
        cfg = SetDenoiserConfig(d_in=6)
        net = SetDenoiser(cfg, seed=0)
        with pytest.raises(ShapeError):
            net(np.zeros((3, 6)), np.zeros((2, 4, 32)), 0.5)

    def test_batched_matches_per_scene(self):
        cfg = SetDenoiserConfig(d_in=5)
        net = random_net(cfg, seed=9)
        rng = np.random.default_rng(3)
        s = rng.normal(size=(4, 3, 5))
        ctx = rng.normal(size=(4, 3, cfg.n_ctx_tokens, cfg.d_ctx))
        batched = net(s, ctx, 0.6)
        for b in range(4):
            assert np.allclose(batched[b], net(s[b], ctx[b], 0.6), atol=1e-12)


class TestTraining:
    def _setup(self, seed=0):
        cfg = SetDenoiserConfig(d_in=4, d_model=32, n_blocks=1, n_freqs=8)
        net = SetDenoiser(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        clean = rng.normal(0, 0.5, size=(8, 2, 4))
        tokens = rng.normal(size=(8, 2, cfg.n_ctx_tokens, cfg.d_ctx))
        return cfg, net, clean, tokens

    def test_loss_nonnegative(self):
        _, net, clean, tokens = self._setup()
        loss = training_loss(net, T.Tensor(tokens), clean, DiffusionConfig(), np.random.default_rng(0))
        assert loss.data >= 0

    def test_training_reduces_loss_on_frozen_dataset(self):
        cfg, net, clean, tokens = self._setup(seed=1)
        dcfg = DiffusionConfig()
        opt = AdamW(net.params, lr=1e-3, warmup_steps=20, total_steps=500)
        rng = np.random.default_rng(2)
        first = [
            train_step(net, None, opt, clean, tokens, dcfg, rng) for _ in range(20)
        ]
        rest = [train_step(net, None, opt, clean, tokens, dcfg, rng) for _ in range(480)]
        assert np.mean(rest[-50:]) < 0.5 * np.mean(first)

    def test_zero_lr_leaves_weights_bit_identical(self):
        cfg, net, clean, tokens = self._setup(seed=3)
        before = {k: v.data.copy() for k, v in net.params.items()}
        opt = AdamW(net.params, lr=0.0, warmup_steps=1)
        train_step(net, None, opt, clean, tokens, DiffusionConfig(), np.random.default_rng(0))
        for k, v in net.params.items():
            assert np.array_equal(v.data, before[k]), k

    def test_gradient_matches_finite_differences(self):
        cfg, net, clean, tokens = self._setup(seed=4)
        dcfg = DiffusionConfig()
        name = "block0.ca.wq"
        param = net.params[name]

        loss = training_loss(net, T.Tensor(tokens), clean, dcfg, np.random.default_rng(11))
        grads = T.backward(loss)
        analytic = grads[id(param)].data

        idx = (1, 2)
        h = 1e-5
        orig = param.data[idx]
        param.data[idx] = orig + h
        hi = training_loss(net, T.Tensor(tokens), clean, dcfg, np.random.default_rng(11)).data
        param.data[idx] = orig - h
        lo = training_loss(net, T.Tensor(tokens), clean, dcfg, np.random.default_rng(11)).data
        param.data[idx] = orig
        numeric = (hi - lo) / (2 * h)
        assert analytic[idx] == pytest.approx(numeric, rel=1e-3)

    def test_empty_batch_rejected(self):
        cfg, net, clean, tokens = self._setup()
        opt = AdamW(net.params)
        with pytest.raises(ValueError):
            train_step(net, None, opt, clean[:0], tokens[:0], DiffusionConfig(), np.random.default_rng(0))


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        named = {
            "a": np.random.default_rng(0).normal(size=(3, 4)),
            "b": np.array([1e-17, math.pi, -0.0]),
        }
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, {"kind": "test"}, named)
        config, loaded = load_checkpoint(path)
        assert config == {"kind": "test"}
        for k in named:
            assert np.array_equal(loaded[k], named[k]), k

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, {}, {"w": np.zeros(2)})
        doc = path.read_text().replace('"format_version":1', '"format_version":99')
        path.write_text(doc)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "nope.json")
