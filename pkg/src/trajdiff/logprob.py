"""Exact sample log-probability along the probability-flow ODE.

A sample's density under the model follows from the instantaneous
change-of-variables formula: integrate the flow f(x, sigma) = (x - D(x; sigma)) / sigma
from near zero noise up to sigma_max, accumulate the divergence of f along
the path, and add the Gaussian prior term at sigma_max. The divergence is
either an exact trace (one flow Jacobian column per dimension) or
Hutchinson's unbiased Rademacher estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import Denoiser, DiffusionConfig, step_schedule
from .errors import DomainError, NumericError

FD_STEP = 1e-5


@dataclass(frozen=True)
class LogProbResult:
    logp: float  # nats
    divergence_integral: float
    prior_logp: float
    estimator: str  # "exact" | "hutchinson"
    probes: int | None = None


def flow(x: np.ndarray, sigma: float, denoiser: Denoiser, ctx) -> np.ndarray:
    """Time derivative of the probability-flow ODE: -(D(x; sigma) - x) / sigma."""
    if sigma <= 0:
        raise DomainError("flow: sigma must be strictly positive")
    d_out = denoiser.denoise(x, ctx, sigma)
    return (x - d_out) / sigma


def exact_divergence(
    x: np.ndarray,
    sigma: float,
    denoiser: Denoiser,
    ctx,
    step: float = FD_STEP,
) -> float:
    """Trace of the flow Jacobian, column by column.

    Central finite differences of the flow, two evaluations per dimension
    of x, batched into a single denoiser call. (Forward differences would
    carry an O(step) bias that breaks the mirror symmetry of symmetric
    mixtures and the exact-vs-Hutchinson agreement.)
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    hi = np.repeat(x.reshape(1, -1), n, axis=0)
    hi[np.arange(n), np.arange(n)] += step
    lo = np.repeat(x.reshape(1, -1), n, axis=0)
    lo[np.arange(n), np.arange(n)] -= step
    both = np.concatenate([hi, lo]).reshape((2 * n,) + x.shape)
    flows = flow(both, sigma, denoiser, ctx).reshape(2 * n, n)
    return float((np.diag(flows[:n]) - np.diag(flows[n:])).sum() / (2 * step))


def hutchinson_divergence(
    x: np.ndarray,
    sigma: float,
    denoiser: Denoiser,
    ctx,
    rng: np.random.Generator,
    probes: int,
    step: float = FD_STEP,
) -> float:
    """Unbiased trace estimate: mean over probes of v^T (df/dx) v, Rademacher v.

    The Jacobian-vector product uses central differences along each probe
    direction; probes are evaluated as one batch.
    """
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}")
    x = np.asarray(x, dtype=np.float64)
    v = rng.integers(0, 2, size=(probes,) + x.shape) * 2.0 - 1.0
    hi = flow(x[None] + step * v, sigma, denoiser, ctx)
    lo = flow(x[None] - step * v, sigma, denoiser, ctx)
    jvp = (hi - lo) / (2 * step)  # (probes,) + x.shape
    axes = tuple(range(1, jvp.ndim))
    return float((v * jvp).sum(axis=axes).mean())


def _divergence_at(x, sigma, denoiser, ctx, estimator, rng, probes) -> float:
    if estimator == "exact":
        return exact_divergence(x, sigma, denoiser, ctx)
    if estimator == "hutchinson":
        return hutchinson_divergence(x, sigma, denoiser, ctx, rng, probes)
    raise ValueError(f"unknown estimator {estimator!r}")


def sample_logp(
    x0: np.ndarray,
    denoiser: Denoiser,
    ctx,
    cfg: DiffusionConfig,
    estimator: str = "exact",
    probes: int = 100,
    rng: np.random.Generator | None = None,
) -> LogProbResult:
    """Model log-density of x0 in nats.

    Integrates the ODE forward from sigma_min (the score is singular at 0;
    the truncation's effect is O(sigma_min^2)) to sigma_max on the same
    rho-warped grid the sampler uses, with Heun steps and a trapezoidal
    accumulation of the divergence. The prior is N(0, sigma_max^2 I).
    """
    if estimator == "hutchinson" and rng is None:
        raise ValueError("hutchinson estimator requires an rng")
    x = np.asarray(x0, dtype=np.float64)
    sigmas = step_schedule(cfg)[:-1][::-1]  # ascending, sigma_min .. sigma_max

    def heun_step(state, a, b):
        d_a = flow(state, a, denoiser, ctx)
        pred = state + (b - a) * d_a
        d_b = flow(pred, b, denoiser, ctx)
        out = state + (b - a) * 0.5 * (d_a + d_b)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite state integrating density at sigma {b:.4g}")
        return out

    # Each grid interval is split at its midpoint: two Heun half-steps for
    # the state and Simpson weights for the divergence, which the coarse
    # warped grid needs at large sigma.
    div = _divergence_at(x, sigmas[0], denoiser, ctx, estimator, rng, probes)
    integral = 0.0
    for i in range(len(sigmas) - 1):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        s_mid = 0.5 * (s_cur + s_next)
        x = heun_step(x, s_cur, s_mid)
        div_mid = _divergence_at(x, s_mid, denoiser, ctx, estimator, rng, probes)
        x = heun_step(x, s_mid, s_next)
        div_next = _divergence_at(x, s_next, denoiser, ctx, estimator, rng, probes)
        integral += (s_next - s_cur) / 6.0 * (div + 4.0 * div_mid + div_next)
        div = div_next

    n = x.size
    sigma_max = sigmas[-1]
    prior_logp = float(
        -0.5 * n * math.log(2 * math.pi * sigma_max**2) - 0.5 * (x * x).sum() / sigma_max**2
    )
    # Eq. of motion integrates T -> 0 when sampling; the density subtracts
    # the divergence integral taken in that direction, i.e. minus ours.
    divergence_integral = -integral
    return LogProbResult(
        logp=prior_logp - divergence_integral,
        divergence_integral=divergence_integral,
        prior_logp=prior_logp,
        estimator=estimator,
        probes=probes if estimator == "hutchinson" else None,
    )
