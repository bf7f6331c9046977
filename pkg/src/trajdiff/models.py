"""Denoiser implementations and training.

Two denoisers share the sampling machinery: a closed-form Gaussian-mixture
oracle used to verify the sampler/log-probability plumbing end to end, and
a learned set denoiser that applies weight-shared attention over the agent
axis (self-attention among agents, cross-attention from each agent to its
own context tokens), which makes it permutation-equivariant by
construction: no parameter or positional encoding depends on the agent
index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .diffusion import DiffusionConfig, c_noise, sample_training_noise
from .errors import DataError, NumericError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Gaussian-mixture oracle


@dataclass(frozen=True)
class GmmOracle:
    """Mixture of isotropic Gaussians with a closed-form posterior mean.

    denoise() returns E[x0 | x, sigma] exactly, which equals
    x + sigma^2 * grad log p(x; sigma); sampling from it through the ODE
    therefore has known marginals, making it the reference point for every
    sampler and likelihood test.
    """

    weights: np.ndarray
    means: np.ndarray  # (K, d)
    scale: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {w.sum()!r}")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _log_resp(self, x: np.ndarray, var: float) -> np.ndarray:
        # x: (..., d) -> unnormalized log responsibilities (..., K)
        diff = x[..., None, :] - self.means  # (..., K, d)
        sq = np.sum(diff * diff, axis=-1)
        return np.log(self.weights) - 0.5 * sq / var

    def denoise(self, x: np.ndarray, ctx, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if sigma == 0:
            return x.copy()
        s2 = self.scale * self.scale
        var = s2 + sigma * sigma
        logr = self._log_resp(x, var)
        logr -= logr.max(axis=-1, keepdims=True)  # log-sum-exp stabilization
        r = np.exp(logr)
        r /= r.sum(axis=-1, keepdims=True)
        mu_post = r @ self.means  # (..., d)
        return (s2 * x + sigma * sigma * mu_post) / var

    def logpdf(self, x: np.ndarray, sigma: float = 0.0) -> np.ndarray:
        """Log density of the sigma-smoothed mixture (exact)."""
        x = np.asarray(x, dtype=np.float64)
        var = self.scale * self.scale + sigma * sigma
        logr = self._log_resp(x, var)
        peak = logr.max(axis=-1, keepdims=True)
        lse = peak[..., 0] + np.log(np.exp(logr - peak).sum(axis=-1))
        return lse - 0.5 * self.dim * math.log(2 * math.pi * var)


# ---------------------------------------------------------------------------
# Noise-level embedding


def make_fourier_freqs(num_freqs: int, rng: np.random.Generator, freq_std: float = 1.0) -> np.ndarray:
    """Gaussian frequencies, frozen after initialization."""
    return rng.normal(0.0, freq_std, size=num_freqs)


def noise_embedding(sigma: float, freqs: np.ndarray) -> np.ndarray:
    """[cos(2 pi f_j u), sin(2 pi f_j u)] with u = ln(sigma)/4."""
    u = c_noise(sigma)
    phase = 2.0 * math.pi * freqs * u
    return np.concatenate([np.cos(phase), np.sin(phase)])


def _noise_embedding_batch(cnoise_vals: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    phase = 2.0 * math.pi * np.outer(cnoise_vals, freqs)  # (B, F)
    return np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)


# ---------------------------------------------------------------------------
# Set denoiser


@dataclass(frozen=True)
class SetDenoiserConfig:
    d_in: int = 10  # per-agent latent width (PCA coefficients or flat trajectory)
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 2
    n_freqs: int = 32
    d_ctx: int = 32
    n_ctx_tokens: int = 4
    ffn_mult: int = 4
    self_attention: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


def _linear_init(rng, fan_in, fan_out, scale=1.0):
    return rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out))


class SetDenoiser:
    """Raw network F: scaled noisy latents + noise embedding -> residual.

    Tokens are one per agent. Each block applies (optionally)
    self-attention over the agent axis, then cross-attention where agent i
    attends only to its own context tokens, then a feed-forward layer, all
    with pre-norm residuals. Weights are shared across agents and there is
    no positional encoding over agents, so permuting agents (jointly in
    input and context) permutes the output identically.
    """

    def __init__(self, cfg: SetDenoiserConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.freqs = make_fourier_freqs(cfg.n_freqs, rng)
        p: dict[str, T.Tensor] = {}
        d, h = cfg.d_model, cfg.n_heads
        emb = 2 * cfg.n_freqs

        p["in.w"] = T.parameter(_linear_init(rng, cfg.d_in + emb, d))
        p["in.b"] = T.parameter(np.zeros(d))
        for i in range(cfg.n_blocks):
            pre = f"block{i}."
            if cfg.self_attention:
                p[pre + "sa.ln.g"] = T.parameter(np.ones(d))
                p[pre + "sa.ln.b"] = T.parameter(np.zeros(d))
                for nm in ("wq", "wk", "wv", "wo"):
                    p[pre + f"sa.{nm}"] = T.parameter(_linear_init(rng, d, d))
                    p[pre + f"sa.{nm}b"] = T.parameter(np.zeros(d))
            p[pre + "ca.ln.g"] = T.parameter(np.ones(d))
            p[pre + "ca.ln.b"] = T.parameter(np.zeros(d))
            p[pre + "ca.wq"] = T.parameter(_linear_init(rng, d, d))
            p[pre + "ca.wqb"] = T.parameter(np.zeros(d))
            p[pre + "ca.wk"] = T.parameter(_linear_init(rng, cfg.d_ctx, d))
            p[pre + "ca.wkb"] = T.parameter(np.zeros(d))
            p[pre + "ca.wv"] = T.parameter(_linear_init(rng, cfg.d_ctx, d))
            p[pre + "ca.wvb"] = T.parameter(np.zeros(d))
            p[pre + "ca.wo"] = T.parameter(_linear_init(rng, d, d))
            p[pre + "ca.wob"] = T.parameter(np.zeros(d))
            p[pre + "ff.ln.g"] = T.parameter(np.ones(d))
            p[pre + "ff.ln.b"] = T.parameter(np.zeros(d))
            p[pre + "ff.w1"] = T.parameter(_linear_init(rng, d, cfg.ffn_mult * d, scale=math.sqrt(2)))
            p[pre + "ff.b1"] = T.parameter(np.zeros(cfg.ffn_mult * d))
            p[pre + "ff.w2"] = T.parameter(_linear_init(rng, cfg.ffn_mult * d, d))
            p[pre + "ff.b2"] = T.parameter(np.zeros(d))
        p["out.ln.g"] = T.parameter(np.ones(d))
        p["out.ln.b"] = T.parameter(np.zeros(d))
        # Zero-init output so the preconditioned denoiser starts at c_skip * x.
        p["out.w"] = T.parameter(np.zeros((d, cfg.d_in)))
        p["out.b"] = T.parameter(np.zeros(cfg.d_in))
        self.params = p

    @staticmethod
    def _layer_norm(x, g, b, eps=1e-6):
        mu = T.tmean(x, axis=-1, keepdims=True)
        xc = T.sub(x, mu)
        var = T.tmean(T.mul(xc, xc), axis=-1, keepdims=True)
        xn = T.div(xc, T.sqrt(T.add(var, eps)))
        return T.add(T.mul(xn, g), b)

    def _heads(self, x):
        # (..., L, d_model) -> (..., heads, L, d_head)
        cfg = self.cfg
        dh = cfg.d_model // cfg.n_heads
        shape = x.shape[:-1] + (cfg.n_heads, dh)
        x = T.reshape(x, shape)
        axes = list(range(len(shape)))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return T.transpose(x, axes)

    def _merge_heads(self, x):
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        x = T.transpose(x, axes)
        return T.reshape(x, x.shape[:-2] + (self.cfg.d_model,))

    def _attend(self, q, k, v):
        dh = self.cfg.d_model // self.cfg.n_heads
        scores = T.div(T.matmul(q, T.swapaxes(k, -1, -2)), math.sqrt(dh))
        return T.matmul(T.softmax(scores, axis=-1), v)

    def _self_attention(self, x, pre):
        p = self.params
        q = self._heads(T.add(T.matmul(x, p[pre + "wq"]), p[pre + "wqb"]))
        k = self._heads(T.add(T.matmul(x, p[pre + "wk"]), p[pre + "wkb"]))
        v = self._heads(T.add(T.matmul(x, p[pre + "wv"]), p[pre + "wvb"]))
        out = self._merge_heads(self._attend(q, k, v))
        return T.add(T.matmul(out, p[pre + "wo"]), p[pre + "wob"])

    def _cross_attention(self, x, ctx, pre):
        # x: (B, Na, d_model); ctx: (B, Na, Nc, d_ctx). Agent i's single
        # query token attends only to agent i's context tokens.
        p = self.params
        q = T.reshape(T.add(T.matmul(x, p[pre + "wq"]), p[pre + "wqb"]), x.shape[:-1] + (1, self.cfg.d_model))
        k = T.add(T.matmul(ctx, p[pre + "wk"]), p[pre + "wkb"])
        v = T.add(T.matmul(ctx, p[pre + "wv"]), p[pre + "wvb"])
        out = self._attend(self._heads(q), self._heads(k), self._heads(v))
        out = T.reshape(self._merge_heads(out), x.shape)
        return T.add(T.matmul(out, p[pre + "wo"]), p[pre + "wob"])

    def forward_t(self, s: T.Tensor, ctx: T.Tensor, cnoise) -> T.Tensor:
        """Tensor-mode forward on (B, N_a, d_in) with context (B, N_a, N_c, d_ctx)."""
        cfg, p = self.cfg, self.params
        b, na, d_in = s.shape
        if na == 0:
            raise ShapeError("set denoiser requires at least one agent")
        if ctx.shape[:2] != (b, na):
            raise ShapeError(f"context shape {ctx.shape} does not match input {s.shape}")
        if d_in != cfg.d_in:
            raise ShapeError(f"input width {d_in}, model expects {cfg.d_in}")

        cn = np.broadcast_to(np.asarray(cnoise, dtype=np.float64), (b,))
        emb = _noise_embedding_batch(cn, self.freqs)  # (B, 2F)
        emb = np.broadcast_to(emb[:, None, :], (b, na, emb.shape[-1])).copy()

        h = T.add(T.matmul(T.concat([s, T.Tensor(emb)], axis=-1), p["in.w"]), p["in.b"])
        for i in range(cfg.n_blocks):
            pre = f"block{i}."
            if cfg.self_attention:
                hn = self._layer_norm(h, p[pre + "sa.ln.g"], p[pre + "sa.ln.b"])
                h = T.add(h, self._self_attention(hn, pre + "sa."))
            hn = self._layer_norm(h, p[pre + "ca.ln.g"], p[pre + "ca.ln.b"])
            h = T.add(h, self._cross_attention(hn, ctx, pre + "ca."))
            hn = self._layer_norm(h, p[pre + "ff.ln.g"], p[pre + "ff.ln.b"])
            ff = T.matmul(T.relu(T.add(T.matmul(hn, p[pre + "ff.w1"]), p[pre + "ff.b1"])), p[pre + "ff.w2"])
            h = T.add(h, T.add(ff, p[pre + "ff.b2"]))
        h = self._layer_norm(h, p["out.ln.g"], p["out.ln.b"])
        return T.add(T.matmul(h, p["out.w"]), p["out.b"])

    def __call__(self, s, ctx, cnoise):
        """ndarray convenience path: no tape, same arithmetic."""
        if isinstance(s, T.Tensor):
            return self.forward_t(s, ctx, cnoise)
        s = np.asarray(s, dtype=np.float64)
        squeeze = s.ndim == 2
        if squeeze:
            s = s[None]
            ctx = np.asarray(ctx, dtype=np.float64)[None]
        with T.no_grad():
            out = self.forward_t(T.Tensor(s), T.as_tensor(ctx), cnoise).data
        return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# Optimizer and training


class AdamW:
    """Adam with decoupled weight decay and linear warmup/decay."""

    def __init__(
        self,
        params: dict[str, T.Tensor],
        lr: float = 5e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.03,
        warmup_steps: int = 200,
        total_steps: int | None = None,
    ):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = max(1, warmup_steps)
        self.total_steps = total_steps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def current_lr(self) -> float:
        step = self.t + 1
        scale = min(1.0, step / self.warmup_steps)
        if self.total_steps and self.total_steps > self.warmup_steps:
            frac = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
            scale *= max(0.0, 1.0 - max(0.0, frac))
        return self.lr * scale

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr = self.current_lr()
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, param in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param.data = param.data - lr * (update + self.weight_decay * param.data)


def training_loss(
    net: SetDenoiser,
    ctx_tokens: T.Tensor,
    clean: np.ndarray,
    cfg: DiffusionConfig,
    rng: np.random.Generator,
) -> T.Tensor:
    """Denoising loss on one batch, in the network's preconditioned scale.

    Per example: sigma ~ q(sigma), eps ~ N(0, sigma^2 I); the network is
    trained to regress the residual target (clean - c_skip * noisy) / c_out,
    which is the L2 denoising objective with the preconditioning weighting.
    """
    b = clean.shape[0]
    sigma = sample_training_noise(rng, cfg, size=b)
    eps = rng.standard_normal(clean.shape) * sigma[:, None, None]
    noisy = clean + eps

    s2 = sigma * sigma
    var = s2 + cfg.sigma_data**2
    c_skip = (cfg.sigma_data**2 / var)[:, None, None]
    c_in = (1.0 / np.sqrt(var))[:, None, None]
    c_out = (sigma * cfg.sigma_data / np.sqrt(var))[:, None, None]

    target = (clean - c_skip * noisy) / c_out
    f_out = net.forward_t(T.Tensor(c_in * noisy), ctx_tokens, c_noise(sigma))
    diff = T.sub(f_out, T.Tensor(target))
    return T.tmean(T.mul(diff, diff))


def train_step(
    net: SetDenoiser,
    encoder,
    opt: AdamW,
    clean: np.ndarray,
    ctx_feats: np.ndarray,
    cfg: DiffusionConfig,
    rng: np.random.Generator,
) -> float:
    """One gradient update over a batch of (clean latents, context features).

    ``encoder`` maps (B, N_a, F) features to context tokens in Tensor mode;
    pass None when ``ctx_feats`` already holds tokens (B, N_a, N_c, d_ctx).
    """
    if clean.shape[0] == 0:
        raise ValueError("empty training batch")
    tokens = encoder.forward_t(T.Tensor(ctx_feats)) if encoder is not None else T.Tensor(ctx_feats)
    loss = training_loss(net, tokens, clean, cfg, rng)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite training loss at optimizer step {opt.t}")
    grads = T.backward(loss)
    named = {}
    for name, param in opt.params.items():
        g = grads.get(id(param))
        if g is not None:
            named[name] = g.data
    opt.step(named)
    return float(loss.data)


# ---------------------------------------------------------------------------
# Checkpoint serialization


def tensors_to_json(named: dict[str, np.ndarray]) -> list[dict]:
    return [
        {"name": k, "shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
        for k, v in named.items()
    ]


def tensors_from_json(items: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for item in items:
        arr = np.array(item["data"], dtype=np.float64).reshape(item["shape"])
        out[item["name"]] = arr
    return out


def save_checkpoint(path, config: dict, named: dict[str, np.ndarray]) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config,
        "tensors": tensors_to_json(named),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint format version {version!r} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return doc["config"], tensors_from_json(doc["tensors"])
