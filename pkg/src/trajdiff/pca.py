"""Whitened PCA compression of canonicalized per-agent trajectories.

Trajectories are rigidly mapped into the agent frame (current position at
the origin, heading along +y), flattened, and projected onto the top
principal components scaled so the fitting population has unit variance
per coefficient. Diffusion then runs in this small coefficient space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, ShapeError

PCA_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # radians, standard math convention (0 along +x)

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise DomainError("pose fields must be finite")


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def canonicalize(waypoints: np.ndarray, pose: Pose) -> np.ndarray:
    """Rigidly map scene-frame waypoints into the agent frame.

    The agent's current position goes to the origin and its heading to +y;
    distances are preserved exactly.
    """
    pts = np.asarray(waypoints, dtype=np.float64)
    rot = _rotation(math.pi / 2 - pose.heading)
    return (pts - [pose.x, pose.y]) @ rot.T


def decanonicalize(waypoints: np.ndarray, pose: Pose) -> np.ndarray:
    pts = np.asarray(waypoints, dtype=np.float64)
    rot = _rotation(math.pi / 2 - pose.heading)
    return pts @ rot + [pose.x, pose.y]


def canonicalize_rotation(pose: Pose) -> np.ndarray:
    """The rotation used by canonicalize (its transpose undoes it)."""
    return _rotation(math.pi / 2 - pose.heading)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors as columns), sorted descending.
    Deterministic: no dependence on LAPACK build or thread count.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"jacobi_eigh: expected square matrix, got {a.shape}")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, (a * a).sum() - (np.diag(a) ** 2).sum()))
        if off <= tol * max(1.0, np.abs(np.diag(a)).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if abs(theta) > 1e150:  # theta^2 would overflow
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                rot_p, rot_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * rot_p - s * rot_q
                v[:, q] = s * rot_p + c * rot_q
    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], v[:, order]


@dataclass(frozen=True)
class PcaModel:
    """Whitened principal components of flattened trajectories.

    components[k] = v_k / sqrt(lambda_k), so transform() yields unit-variance
    coefficients over the fitting population; inverse_map undoes it.
    """

    n_p: int
    mean: np.ndarray  # (N_t * N_f,)
    components: np.ndarray  # (N_p, N_t * N_f), whitened rows
    inverse_map: np.ndarray  # (N_t * N_f, N_p)
    explained_variance_ratio: np.ndarray  # (N_p,)

    @property
    def ambient_dim(self) -> int:
        return self.mean.shape[0]

    def _flatten(self, traj: np.ndarray) -> np.ndarray:
        arr = np.asarray(traj, dtype=np.float64)
        flat = arr.reshape(arr.shape[: max(0, arr.ndim - 2)] + (-1,)) if arr.ndim >= 2 else arr
        if flat.shape[-1] != self.ambient_dim:
            raise ShapeError(f"trajectory has {flat.shape[-1]} values, model expects {self.ambient_dim}")
        return flat

    def transform(self, traj: np.ndarray) -> np.ndarray:
        """Flattened (..., N_t, N_f) trajectories -> (..., N_p) coefficients."""
        return (self._flatten(traj) - self.mean) @ self.components.T

    def inverse_transform(self, coeffs: np.ndarray, n_t: int | None = None) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1] != self.n_p:
            raise ShapeError(f"got {coeffs.shape[-1]} coefficients, model has {self.n_p}")
        flat = coeffs @ self.inverse_map.T + self.mean
        if n_t is None:
            return flat
        return flat.reshape(flat.shape[:-1] + (n_t, -1))


def fit_pca(population: np.ndarray, n_p: int) -> PcaModel:
    """Fit whitened PCA on (N_s, N_t, N_f) or (N_s, D) canonicalized trajectories.

    Components are the top eigenvectors of the sample covariance
    (denominator N_s - 1), each scaled to give unit-variance coefficients;
    sign convention: the largest-magnitude entry of each component is
    positive.
    """
    pop = np.asarray(population, dtype=np.float64)
    if pop.ndim == 3:
        pop = pop.reshape(pop.shape[0], -1)
    n_s, dim = pop.shape
    if not n_s > n_p >= 1:
        raise ValueError(f"need population size > n_p >= 1, got N_s={n_s}, n_p={n_p}")
    mean = pop.mean(axis=0)
    centered = pop - mean
    cov = centered.T @ centered / (n_s - 1)
    eigvals, eigvecs = jacobi_eigh(cov)

    # Floor relative to the population's own scale, so numerically-zero
    # directions are caught even when rounding leaves ~1e-30 residue.
    scale = float((pop * pop).mean()) + 1e-30
    floor = 1e-14 * scale
    total = eigvals.clip(min=0.0).sum()
    if total <= floor:
        raise DataError("population has zero variance; cannot fit PCA")
    bad = np.nonzero(eigvals[:n_p] <= max(floor, 1e-12 * eigvals[0]))[0]
    if bad.size:
        raise DataError(
            f"rank-deficient population: components {bad.tolist()} have (near-)zero variance; "
            f"reduce n_p below {int(bad[0]) + 1}"
        )

    vecs = eigvecs[:, :n_p]
    # Deterministic sign: largest-magnitude entry of each component positive.
    idx = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[idx, np.arange(n_p)])
    vecs = vecs * signs
    lam = eigvals[:n_p]
    components = (vecs / np.sqrt(lam)).T  # (N_p, dim)
    ratios = eigvals.clip(min=0.0)[:n_p] / total
    return PcaModel(
        n_p=n_p,
        mean=mean,
        components=components,
        inverse_map=_inverse_map_from_components(components),
        explained_variance_ratio=ratios,
    )


def _inverse_map_from_components(components: np.ndarray) -> np.ndarray:
    # Whitened rows satisfy ||w_k||^2 = 1 / lambda_k; this is the single
    # canonical derivation so fitted and reloaded models decode identically.
    lam = 1.0 / (components * components).sum(axis=1)
    return (components * lam[:, None]).T


def save_pca(model: PcaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pca_to_dict(model), fh, sort_keys=True, separators=(",", ":"))


def load_pca(path) -> PcaModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read PCA model {path}: {exc}") from exc
    if doc.get("format_version") != PCA_FORMAT_VERSION:
        raise DataError(f"PCA model format version {doc.get('format_version')!r} unsupported")
    return pca_from_dict(doc)


def pca_to_dict(model: PcaModel) -> dict:
    return {
        "format_version": PCA_FORMAT_VERSION,
        "n_p": model.n_p,
        "mean": model.mean.tolist(),
        "components": model.components.ravel().tolist(),
        "explained_variance_ratio": model.explained_variance_ratio.tolist(),
    }


def pca_from_dict(doc: dict) -> PcaModel:
    n_p = int(doc["n_p"])
    mean = np.array(doc["mean"], dtype=np.float64)
    components = np.array(doc["components"], dtype=np.float64).reshape(n_p, mean.shape[0])
    return PcaModel(
        n_p=n_p,
        mean=mean,
        components=components,
        inverse_map=_inverse_map_from_components(components),
        explained_variance_ratio=np.array(doc["explained_variance_ratio"], dtype=np.float64),
    )
