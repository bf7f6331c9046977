"""Noise schedule, denoiser preconditioning, and the deterministic
probability-flow sampler.

The diffused variable follows a variance-exploding process with a linear
noise schedule sigma(t) = t, so integrating dx/dsigma = (x - D(x; sigma)) / sigma
from sigma_max down to 0 transports Gaussian noise onto the data
distribution. Sampling uses Heun's 2nd-order method (two denoiser
evaluations per step, plain Euler on the final step where the score is
undefined at sigma = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class DiffusionConfig:
    sigma_data: float = 0.5
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    num_steps: int = 32
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be positive, got {self.sigma_data}")
        if self.p_std <= 0:
            raise ValueError(f"p_std must be positive, got {self.p_std}")

    def with_steps(self, num_steps: int) -> "DiffusionConfig":
        return replace(self, num_steps=num_steps)


class Denoiser(Protocol):
    """Estimates the clean signal from a noisy one at noise level sigma."""

    def denoise(self, x: np.ndarray, ctx, sigma: float) -> np.ndarray: ...


# Guidance hook: extra score added to the model score at every denoiser
# evaluation. Called as guidance(x, sigma) -> array shaped like x.
GuidanceFn = Callable[[np.ndarray, float], np.ndarray]


class PreconditionCoeffs:
    """Input/output/skip scalings keeping the network unit-scale at every
    noise level. ``c_noise`` is ln(sigma)/4 and undefined at sigma = 0."""

    __slots__ = ("c_skip", "c_in", "c_out", "sigma")

    def __init__(self, c_skip: float, c_in: float, c_out: float, sigma: float):
        self.c_skip = c_skip
        self.c_in = c_in
        self.c_out = c_out
        self.sigma = sigma

    @property
    def c_noise(self) -> float:
        if self.sigma <= 0:
            raise DomainError("c_noise: undefined at sigma = 0")
        return 0.25 * math.log(self.sigma)

    def __iter__(self):
        return iter((self.c_skip, self.c_in, self.c_out, self.c_noise))


def precondition_coeffs(sigma: float, sigma_data: float) -> PreconditionCoeffs:
    if sigma < 0:
        raise DomainError(f"precondition_coeffs: sigma must be >= 0, got {sigma}")
    var = sigma * sigma + sigma_data * sigma_data
    return PreconditionCoeffs(
        c_skip=sigma_data * sigma_data / var,
        c_in=1.0 / math.sqrt(var),
        c_out=sigma * sigma_data / math.sqrt(var),
        sigma=sigma,
    )


def c_noise(sigma) -> np.ndarray | float:
    """ln(sigma)/4, the network's noise-level input. Vectorized."""
    arr = np.asarray(sigma, dtype=np.float64)
    if np.any(arr <= 0):
        raise DomainError("c_noise: sigma must be strictly positive")
    out = 0.25 * np.log(arr)
    return float(out) if out.ndim == 0 else out


class PreconditionedDenoiser:
    """D(x; c, sigma) = c_skip * x + c_out * F(c_in * x; c, c_noise(sigma)).

    ``network`` is called with the scaled input, the context, and the
    encoded noise level, and must return an array of the input's shape.
    """

    def __init__(self, network, cfg: DiffusionConfig):
        self.network = network
        self.cfg = cfg

    def denoise(self, x: np.ndarray, ctx, sigma: float) -> np.ndarray:
        co = precondition_coeffs(sigma, self.cfg.sigma_data)
        raw = self.network(co.c_in * x, ctx, co.c_noise)
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != x.shape:
            raise NumericError(
                f"preconditioned network returned shape {raw.shape}, expected {x.shape}"
            )
        return co.c_skip * x + co.c_out * raw

    def denoise_tensor(self, x, ctx, sigma: float):
        """Tensor-mode path for differentiating through the denoiser."""
        from . import tensor as T

        co = precondition_coeffs(sigma, self.cfg.sigma_data)
        raw = self.network(T.mul(x, co.c_in), ctx, co.c_noise)
        return T.add(T.mul(x, co.c_skip), T.mul(raw, co.c_out))


def wrap_denoiser(network, cfg: DiffusionConfig) -> PreconditionedDenoiser:
    return PreconditionedDenoiser(network, cfg)


def score_from_denoiser(d_out: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the sigma-smoothed density: (D(x; sigma) - x) / sigma^2."""
    if sigma <= 0:
        raise DomainError("score_from_denoiser: sigma must be strictly positive")
    if np.shape(d_out) != np.shape(x):
        raise DomainError(f"score_from_denoiser: shapes {np.shape(d_out)} vs {np.shape(x)}")
    return (d_out - x) / (sigma * sigma)


def sample_training_noise(rng: np.random.Generator, cfg: DiffusionConfig, size=None):
    """ln(sigma) ~ Normal(p_mean, p_std^2), clamped to [sigma_min, sigma_max]."""
    draw = np.exp(rng.normal(cfg.p_mean, cfg.p_std, size=size))
    clipped = np.clip(draw, cfg.sigma_min, cfg.sigma_max)
    return float(clipped) if size is None else clipped


def step_schedule(cfg: DiffusionConfig) -> np.ndarray:
    """T+1 noise levels from sigma_max down to exactly 0.

    Interior points follow the rho-warped grid
    sigma_i = (sigma_max^(1/rho) + i/(T-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho.
    """
    t = cfg.num_steps
    i = np.arange(t, dtype=np.float64)
    inv_rho = 1.0 / cfg.rho
    grid = (
        cfg.sigma_max**inv_rho + i / (t - 1) * (cfg.sigma_min**inv_rho - cfg.sigma_max**inv_rho)
    ) ** cfg.rho
    grid[0] = cfg.sigma_max
    grid[-1] = cfg.sigma_min
    return np.concatenate([grid, [0.0]])


def ode_drift(
    x: np.ndarray,
    sigma: float,
    denoiser: Denoiser,
    ctx,
    guidance: GuidanceFn | None = None,
) -> np.ndarray:
    """dx/dsigma = -sigma * (model score + guidance score) = (x - D(x)) / sigma - sigma * g."""
    d_out = denoiser.denoise(x, ctx, sigma)
    drift = (x - d_out) / sigma
    if guidance is not None:
        drift = drift - sigma * guidance(x, sigma)
    return drift


def heun_sample(
    denoiser: Denoiser,
    ctx,
    rng: np.random.Generator | None,
    cfg: DiffusionConfig,
    shape: tuple[int, ...] | None = None,
    guidance: GuidanceFn | None = None,
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Integrate the probability-flow ODE from Gaussian noise to a sample.

    Deterministic given (rng state, denoiser weights, config, guidance):
    the only randomness is the initial state x ~ N(0, sigma_max^2 I),
    which callers may also supply directly via ``x_init`` (already scaled).
    With guidance, the constraint score is added at every denoiser
    evaluation (predictor and corrector alike).
    """
    sigmas = step_schedule(cfg)
    if x_init is None:
        if rng is None or shape is None:
            raise ValueError("heun_sample needs (rng, shape) or an explicit x_init")
        x = rng.standard_normal(shape) * sigmas[0]
    else:
        x = np.array(x_init, dtype=np.float64)
    for i in range(cfg.num_steps):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        d_cur = ode_drift(x, s_cur, denoiser, ctx, guidance)
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            d_next = ode_drift(x_next, s_next, denoiser, ctx, guidance)
            x_next = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"non-finite state at step {i} (sigma {s_cur:.4g} -> {s_next:.4g})")
        x = x_next
    return x
