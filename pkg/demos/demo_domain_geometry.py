"""Build constrained movement domains and query their geometry.

Covers the shape catalog, signed distances, outward normals, projection,
and the grid-graph geodesic oracle behind the horizon bounds.
"""

import numpy as np

from mfg_mintime.geometry import (
    Annulus,
    ArcTarget,
    Box,
    BoxEdgeTarget,
    BoxMinusObstacles,
    Disk,
    DomainSpec,
    IntervalEndTarget,
    Interval,
    build_domain,
    geodesic_distance,
    outward_normal_at,
    project_to_domain,
    signed_distance_at,
)

print("-- corridor: unit segment, exit on the right --")
corridor = build_domain(DomainSpec(Interval(0, 1), IntervalEndTarget("right"),
                                   resolution=100, band_cells=8))
print(f"inside nodes: {corridor.inside_mask.sum()}, "
      f"target nodes: {corridor.target_mask.sum()}")
print(f"signed distance at x=0.3: {signed_distance_at(corridor, np.array([0.3])):+.3f}")
print(f"geodesic constant (straight segment): {corridor.geodesic_constant:.4f}")

print("\n-- square room with a round column --")
room = build_domain(DomainSpec(
    BoxMinusObstacles(Box(0, 1, 0, 1), (Disk(0.5, 0.5, 0.15),)),
    BoxEdgeTarget("right"), resolution=40, band_cells=8,
))
p = np.array([0.5, 0.7])
print(f"signed distance at {p}: {signed_distance_at(room, p):+.4f}")
print(f"normal on the column wall: {outward_normal_at(room, np.array([0.5, 0.66]))}")
print(f"projection of an outside point: {project_to_domain(room, np.array([0.5, 1.03]))}")
a, b = np.array([0.2, 0.5]), np.array([0.8, 0.5])
print(f"geodesic around the column {a} -> {b}: "
      f"{geodesic_distance(room, a, b):.4f} (straight line would be 0.6)")

print("\n-- ring corridor, exit arc on the outer circle --")
ring = build_domain(DomainSpec(
    Annulus(0, 0, 0.35, 1.0), ArcTarget(np.deg2rad(-20), np.deg2rad(20)),
    resolution=26, band_cells=4,
))
print(f"grid {ring.grid_shape}, inside nodes {ring.inside_mask.sum()}")
print(f"geodesic constant of the ring: {ring.geodesic_constant:.3f} "
      "(paths must wrap the hole)")
