"""Transport distances between crowd snapshots.

The 1-Wasserstein distance is the convergence metric of the fixed-point
iteration: closed-form in one dimension, an exact integer min-cost flow
on the grid graph in two.
"""

import numpy as np

from mfg_mintime.geometry import Box, BoxEdgeTarget, DomainSpec, \
    Interval, IntervalEndTarget, build_domain
from mfg_mintime.measures import (
    UniformM0,
    deposit_positions,
    sample_initial_particles,
    density_from_particles,
    wasserstein1,
)

print("-- 1D: two displaced uniform blocks --")
corridor = build_domain(DomainSpec(Interval(0, 1), IntervalEndTarget("right"),
                                   resolution=100, band_cells=6))
nodes = corridor.node_coordinates().ravel()
mu = np.where((nodes <= 0.5) & corridor.inside_mask, 1.0, 0.0)
nu = np.where((nodes >= 0.25) & (nodes <= 0.75) & corridor.inside_mask, 1.0, 0.0)
mu /= mu.sum() * corridor.cell_size
nu /= nu.sum() * corridor.cell_size
print(f"W1 = {wasserstein1(mu, nu, corridor):.4f}  (shift formula gives 0.25)")

print("\n-- 2D: transported bumps on a square --")
square = build_domain(DomainSpec(Box(0, 1, 0, 1), BoxEdgeTarget("right"),
                                 resolution=20, band_cells=3))
a = deposit_positions(np.array([[0.25, 0.5]]), np.array([1.0]), square, 0.1)
b = deposit_positions(np.array([[0.75, 0.5]]), np.array([1.0]), square, 0.1)
print(f"two bumps 0.5 apart: W1 = {wasserstein1(a, b, square):.4f}")
print(f"symmetry check: {abs(wasserstein1(a, b, square) - wasserstein1(b, a, square)):.1e}")

print("\n-- sampling noise floor of the particle representation --")
m0 = UniformM0(Interval(0.1, 0.4))
exact = np.where((nodes >= 0.1) & (nodes <= 0.4) & corridor.inside_mask,
                 1.0, 0.0)
exact /= exact.sum() * corridor.cell_size
for n in (500, 2000, 8000):
    ens = sample_initial_particles(m0, corridor, n, seed=1)
    kde = density_from_particles(ens, 0.0, corridor, bandwidth=0.02)
    print(f"  N={n:5d}: W1(sampled, exact) = "
          f"{wasserstein1(kde, exact, corridor):.5f}")
