"""Constrained sampling: differentiable trajectory costs injected into the
sampling score.

A noisy latent S is far off the data manifold, but the denoised output
D(S; C, sigma) already resembles a physical trajectory at every noise
level, so the gradient of a cost evaluated on D(S) approximates the score
of the constraint distribution. The resulting constraint score is added to
the model score at every denoiser evaluation, optionally clipped to the
unit-noise scale (score thresholding) for stability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, NumericError

EPS = 1e-9
DEFAULT_LAMBDA_ATTRACT = 20.0
DEFAULT_LAMBDA_REPEL = 40.0


@dataclass(frozen=True)
class AttractorSpec:
    """Pull masked waypoints toward target locations."""

    targets: np.ndarray  # (N_a, N_t, N_f)
    mask: np.ndarray  # binary, same shape
    lam: float = DEFAULT_LAMBDA_ATTRACT

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        m = np.asarray(self.mask, dtype=np.float64)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "mask", m)
        if t.shape != m.shape:
            raise ValueError(f"targets shape {t.shape} != mask shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class RepellerSpec:
    """Penalize agent pairs closer than the radius, at any timestep."""

    radius: float
    lam: float = DEFAULT_LAMBDA_REPEL

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("repeller radius must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class GuidanceConfig:
    specs: tuple = ()
    score_thresholding: bool = True


def attractor_cost(d_out, spec: AttractorSpec):
    """Mean absolute deviation on masked entries: sum|(D - S_t) * M| / (sum M + eps).

    Works on Tensors (differentiable) and plain arrays alike; an all-zero
    mask gives cost 0. A leading batch axis is allowed, in which case the
    per-sample costs are summed.
    """
    mask_sum = float(spec.mask.sum())
    diff = T.mul(T.sub(T.as_tensor(d_out), T.Tensor(spec.targets)), T.Tensor(spec.mask))
    cost = T.div(T.tsum(T.tabs(diff)), mask_sum + EPS)
    return cost if isinstance(d_out, T.Tensor) else float(cost.data)


def _pairwise_sq_dists(pos: T.Tensor) -> T.Tensor:
    # pos: (B, N_a, N_t, 2) -> squared distances (B, N_a, N_a, N_t)
    b, na, nt, _ = pos.shape
    lhs = T.broadcast_to(T.reshape(pos, (b, na, 1, nt, 2)), (b, na, na, nt, 2))
    rhs = T.broadcast_to(T.reshape(pos, (b, 1, na, nt, 2)), (b, na, na, nt, 2))
    d = T.sub(lhs, rhs)
    return T.tsum(T.mul(d, d), axis=-1)


def repeller_cost(d_out, spec: RepellerSpec):
    """Hinge on pairwise distances: A = max((1 - dist/r)(1 - I), 0), averaged
    over the actively violating (pair, timestep) entries.

    The violation count is treated as a constant under differentiation.
    Accepts an optional leading batch axis; per-sample costs are summed.
    """
    pos = T.as_tensor(d_out)
    batched = pos.ndim == 4
    if not batched:
        pos = T.reshape(pos, (1,) + pos.shape)
    na = pos.shape[1]
    if na < 2:
        zero = T.mul(T.tsum(pos), 0.0)
        return zero if isinstance(d_out, T.Tensor) else 0.0
    sq = _pairwise_sq_dists(pos)
    # Clamp before sqrt so the zero self-distances stay differentiable;
    # the (1 - I) factor removes their contribution exactly.
    dist = T.sqrt(T.relu(T.sub(sq, 1e-18)) + 1e-18)
    off_diag = 1.0 - np.eye(na)[None, :, :, None]
    hinge = T.relu(T.mul(T.sub(1.0, T.div(dist, spec.radius)), T.Tensor(off_diag)))
    active = (hinge.data > 0).sum(axis=(1, 2, 3))  # per-sample violation counts
    per_sample = T.tsum(hinge, axis=(1, 2, 3))
    cost = T.tsum(T.div(per_sample, T.Tensor(active + EPS)))
    return cost if isinstance(d_out, T.Tensor) else float(cost.data)


def constraint_score(
    s_noisy: np.ndarray,
    ctx,
    sigma: float,
    denoiser,
    cfg: GuidanceConfig,
    decode=None,
) -> np.ndarray:
    """Constraint gradient score at one noise level.

    Differentiates sum_spec lambda * cost(decode(D(S; C, sigma))) through
    the denoiser with the sign that makes descending the cost raise the
    constraint log-density. With score thresholding the sigma-scaled score
    is clipped elementwise to [-1, 1] and rescaled.

    ``decode`` maps denoised latents to scene-frame trajectories
    (N_a, N_t, N_f) in Tensor mode; identity when the latents already are
    trajectories.
    """
    active = [s for s in cfg.specs if s.lam > 0]
    arr = np.asarray(s_noisy, dtype=np.float64)
    if not active:
        return np.zeros_like(arr)
    batched = arr.ndim == 3
    s = T.parameter(arr if batched else arr[None])
    d_out = denoiser.denoise_tensor(s, ctx, sigma)
    traj = decode(d_out) if decode is not None else d_out
    total = None
    for spec in active:
        if isinstance(spec, AttractorSpec):
            term = T.mul(attractor_cost(traj, spec), spec.lam)
        elif isinstance(spec, RepellerSpec):
            term = T.mul(repeller_cost(traj, spec), spec.lam)
        else:
            raise TypeError(f"unknown constraint spec {type(spec).__name__}")
        total = term if total is None else T.add(total, term)
    grads = T.backward(total)
    g = grads.get(id(s))
    grad = np.zeros_like(s.data) if g is None else g.data
    if not np.all(np.isfinite(grad)):
        names = ", ".join(type(sp).__name__ for sp in active)
        raise NumericError(f"non-finite constraint gradient (specs: {names}) at sigma={sigma:.4g}")
    score = -grad
    if cfg.score_thresholding:
        score = np.clip(sigma * score, -1.0, 1.0) / sigma
    return score if batched else score[0]


def postprocess_optimize(
    samples: np.ndarray,
    spec: AttractorSpec,
    steps: int = 500,
    step_size: float = 0.05,
) -> np.ndarray:
    """Adam descent of the attractor cost directly on raw trajectories.

    The no-diffusion baseline: masked waypoints move onto the targets,
    everything else is untouched, realism be damned.
    """
    out = np.array(samples, dtype=np.float64)
    flat = out.reshape((-1,) + spec.targets.shape) if out.shape != spec.targets.shape else out[None]
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    b1, b2, eps = 0.9, 0.999, 1e-8
    denom = spec.mask.sum() + EPS
    for t in range(1, steps + 1):
        g = np.sign(flat - spec.targets) * spec.mask / denom
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        # linear step decay: sign gradients would otherwise limit-cycle
        lr = step_size * (1.0 - (t - 1) / steps)
        flat -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return flat.reshape(out.shape)


# ---------------------------------------------------------------------------
# JSON wire format


def guidance_to_json(cfg: GuidanceConfig) -> dict:
    attractors = []
    lam_attract = None
    repeller = None
    lam_repel = None
    for spec in cfg.specs:
        if isinstance(spec, AttractorSpec):
            lam_attract = spec.lam
            idx = np.argwhere(spec.mask[..., 0] > 0)
            for agent, t_index in idx:
                attractors.append(
                    {
                        "agent": int(agent),
                        "t_index": int(t_index),
                        "x": float(spec.targets[agent, t_index, 0]),
                        "y": float(spec.targets[agent, t_index, 1]),
                    }
                )
        elif isinstance(spec, RepellerSpec):
            repeller = {"radius": spec.radius}
            lam_repel = spec.lam
    doc: dict = {"score_thresholding": cfg.score_thresholding}
    if attractors:
        doc["attractors"] = attractors
        doc["lambda_attract"] = lam_attract
    if repeller is not None:
        doc["repeller"] = repeller
        doc["lambda_repel"] = lam_repel
    return doc


def guidance_from_json(doc: dict, n_agents: int, n_t: int, n_f: int = 2) -> GuidanceConfig:
    specs: list = []
    attractors = doc.get("attractors") or []
    if attractors:
        targets = np.zeros((n_agents, n_t, n_f))
        mask = np.zeros((n_agents, n_t, n_f))
        for item in attractors:
            try:
                agent, t_index = int(item["agent"]), int(item["t_index"])
                x, y = float(item["x"]), float(item["y"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed attractor entry {item!r}: {exc}") from exc
            if not 0 <= agent < n_agents:
                raise DataError(f"attractor agent {agent} out of range [0, {n_agents})")
            if not 0 <= t_index < n_t:
                raise DataError(f"attractor t_index {t_index} out of range [0, {n_t})")
            targets[agent, t_index, 0] = x
            targets[agent, t_index, 1] = y
            mask[agent, t_index, :] = 1.0
        lam = float(doc.get("lambda_attract", DEFAULT_LAMBDA_ATTRACT))
        specs.append(AttractorSpec(targets=targets, mask=mask, lam=lam))
    rep = doc.get("repeller")
    if rep is not None:
        try:
            radius = float(rep["radius"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed repeller entry {rep!r}: {exc}") from exc
        lam = float(doc.get("lambda_repel", DEFAULT_LAMBDA_REPEL))
        specs.append(RepellerSpec(radius=radius, lam=lam))
    return GuidanceConfig(
        specs=tuple(specs),
        score_thresholding=bool(doc.get("score_thresholding", True)),
    )
