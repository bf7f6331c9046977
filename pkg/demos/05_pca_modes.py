"""Why a handful of principal components suffice for smooth trajectories:
reconstruction error versus component count, and the variance spectrum.

Run: python3 demos/05_pca_modes.py
"""

import numpy as np

from trajdiff import fit_pca
from trajdiff.pca import canonicalize
from trajdiff.scenes import SceneParams, generate_scenario

scenes = [generate_scenario(seed, SceneParams()) for seed in range(1200)]
population = np.stack([canonicalize(a.future, a.pose) for sc in scenes for a in sc.agents])
print(f"population: {population.shape[0]} canonicalized futures, {population.shape[1]} steps\n")

model = fit_pca(population, 10)
cum = np.cumsum(model.explained_variance_ratio)
print("components  explained-variance  cumulative")
for i, (r, c) in enumerate(zip(model.explained_variance_ratio, cum), start=1):
    bar = "#" * int(50 * r)
    print(f"  {i:2d}        {r:8.5f}          {c:.5f}  {bar}")

print("\nmean waypoint reconstruction error vs component count:")
for n_p in (1, 2, 3, 4, 6, 8, 10):
    m = fit_pca(population, n_p)
    rec = m.inverse_transform(m.transform(population), n_t=16)
    err = float(np.sqrt(((rec - population) ** 2).sum(-1)).mean())
    print(f"  N_p={n_p:2d}: {err:.4f} units")

coeffs = model.transform(population)
print(f"\nwhitening: per-component variance = {coeffs.var(axis=0, ddof=1).round(6)}")
