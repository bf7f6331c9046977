"""Greedy joint-sample clustering and joint prediction metrics.

A joint sample is one future trajectory per agent treated as a single
outcome, so clustering coverage and every displacement metric quantify
over whole scenes: a candidate covers a sample only if EVERY agent stays
within the distance threshold, and minSADE takes the best of K joint
predictions rather than mixing agents across predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_K = 6
DEFAULT_TAU = 0.4
DEFAULT_MISS_THRESHOLD = 0.4
DEFAULT_OVERLAP_RADIUS = 0.25


@dataclass(frozen=True)
class ClusteredPrediction:
    trajectories: np.ndarray  # (K, N_a, N_t, N_f)
    probabilities: np.ndarray  # (K,), nonincreasing, sums to 1

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "trajectories", np.asarray(self.trajectories, dtype=np.float64))
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"cluster probabilities must sum to 1, got {p.sum()!r}")
        if np.any(np.diff(p) > 1e-12):
            raise ValueError("cluster probabilities must be nonincreasing")

    @property
    def most_likely(self) -> np.ndarray:
        return self.trajectories[0]


def _coverage_matrix(samples: np.ndarray, tau: float) -> np.ndarray:
    """cover[j, i]: does candidate j cover sample i (every agent's
    max-over-time waypoint distance <= tau)."""
    diff = samples[:, None] - samples[None]  # (N, N, N_a, N_t, N_f)
    dist = np.sqrt((diff * diff).sum(axis=-1))
    worst = dist.max(axis=-1).max(axis=-1)  # (N, N): max over time, then agents
    return worst <= tau


def cluster_joint(samples: np.ndarray, k: int, tau: float = DEFAULT_TAU) -> ClusteredPrediction:
    """K rounds of greedy coverage maximization over joint samples.

    Each round picks the candidate covering the most not-yet-covered
    samples (ties: lowest sample index), claims them, and represents the
    cluster by their mean. Probabilities are the claimed counts normalized
    by the total claimed (equal to count/N whenever every sample ends up
    covered, which K >= 1 rounds guarantee for tau-dense sample sets).
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if not n >= k >= 1:
        raise ValueError(f"need num_samples >= k >= 1, got {n} < {k}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    cover = _coverage_matrix(samples, tau)
    uncovered = np.ones(n, dtype=bool)
    reps, counts = [], []
    for _ in range(k):
        gains = (cover & uncovered).sum(axis=1)
        winner = int(np.argmax(gains))  # argmax takes the lowest index on ties
        claimed = cover[winner] & uncovered
        if not claimed.any():
            claimed = np.zeros(n, dtype=bool)
            claimed[winner] = True  # degenerate: everything already covered
        reps.append(samples[claimed].mean(axis=0))
        counts.append(int(claimed.sum()))
        uncovered &= ~claimed
    counts_arr = np.array(counts, dtype=np.float64)
    probs = counts_arr / counts_arr.sum()
    order = np.argsort(-counts_arr, kind="stable")
    return ClusteredPrediction(
        trajectories=np.stack([reps[i] for i in order]), probabilities=probs[order]
    )


def _joint_displacement(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    # (..., N_a, N_t, N_f) vs (N_a, N_t, N_f) -> per-waypoint distances
    diff = pred - gt
    return np.sqrt((diff * diff).sum(axis=-1))


def sade(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Scene-averaged displacement error: mean over agents and timesteps."""
    return _joint_displacement(pred, gt).mean(axis=(-1, -2))


def sfde(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Scene final displacement error: mean over agents at the last step."""
    return _joint_displacement(pred[..., -1, :], gt[:, -1, :]).mean(axis=-1)


def min_sade(preds: np.ndarray, gt: np.ndarray) -> float:
    return float(sade(preds, gt).min())


def min_sfde(preds: np.ndarray, gt: np.ndarray) -> float:
    return float(sfde(preds, gt).min())


def mean_sade(preds: np.ndarray, gt: np.ndarray) -> float:
    return float(sade(preds, gt).mean())


def mean_sfde(preds: np.ndarray, gt: np.ndarray) -> float:
    return float(sfde(preds, gt).mean())


def miss_rate(preds: np.ndarray, gt: np.ndarray, threshold: float = DEFAULT_MISS_THRESHOLD) -> float:
    """1.0 iff no joint prediction lands every agent's final waypoint within
    the threshold of the ground truth (closed boundary: exactly-at counts
    as a hit)."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    final = _joint_displacement(preds[..., -1, :], gt[:, -1, :])  # (K, N_a)
    hit = (final <= threshold).all(axis=-1).any()
    return 0.0 if hit else 1.0


def overlap_rate(joint: np.ndarray, radius: float = DEFAULT_OVERLAP_RADIUS) -> float:
    """1.0 iff any agent pair comes strictly within 2 * radius at any
    timestep of one joint trajectory (circle approximation); grazing at
    exactly 2 * radius does not count."""
    n_a = joint.shape[0]
    if n_a < 2:
        return 0.0
    diff = joint[:, None] - joint[None]  # (N_a, N_a, N_t, N_f)
    dist = np.sqrt((diff * diff).sum(axis=-1))
    dist[np.arange(n_a), np.arange(n_a)] = np.inf
    return 1.0 if float(dist.min()) < 2 * radius else 0.0


def success_rate(samples: np.ndarray, targets: np.ndarray, mask: np.ndarray, radius: float) -> float:
    """Fraction of joint samples whose masked waypoints all lie within
    `radius` of the targets (closed boundary)."""
    mask_pts = np.asarray(mask, dtype=bool)[..., 0]  # (N_a, N_t)
    if not mask_pts.any():
        raise ValueError("success_rate needs at least one masked waypoint")
    diff = samples - targets  # (N, N_a, N_t, N_f)
    dist = np.sqrt((diff * diff).sum(axis=-1))  # (N, N_a, N_t)
    ok = (dist[:, mask_pts] <= radius).all(axis=-1)
    return float(ok.mean())


def smoothness(trajs: np.ndarray) -> float:
    """Mean second-difference magnitude; lower is smoother."""
    second = np.diff(trajs, n=2, axis=-2)
    return float(np.sqrt((second * second).sum(axis=-1)).mean())


def constant_velocity_baseline(history: np.ndarray, n_t: int, dt: float) -> np.ndarray:
    """Extrapolate each agent's last observed velocity: (N_a, N_hist, 2) -> (N_a, n_t, 2)."""
    vel = (history[:, -1] - history[:, -2]) / dt  # units / second
    steps = np.arange(1, n_t + 1) * dt
    return history[:, -1][:, None, :] + vel[:, None, :] * steps[None, :, None]
