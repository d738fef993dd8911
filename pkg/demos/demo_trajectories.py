"""Integrate optimal paths and run every per-path certificate.

A feedback path around the column is checked for optimality (value
conservation), state constraints, control regularity, equivalence with
the penalized unconstrained problem, and the adjoint conditions.
"""

import numpy as np

from mfg_mintime.congestion import PenalizedSpeed, constant_speed_field
from mfg_mintime.geometry import (
    Box,
    BoxEdgeTarget,
    BoxMinusObstacles,
    Disk,
    DomainSpec,
    build_domain,
)
from mfg_mintime.hjb import solve_value_function
from mfg_mintime.trajectories import (
    check_control_regularity,
    check_dpp,
    check_state_constraint,
    control_regularity_bound,
    integrate_optimal_trajectory,
    integrate_penalized_trajectory,
    pmp_certificate,
)

room = build_domain(DomainSpec(
    BoxMinusObstacles(Box(0, 1, 0, 1), (Disk(0.5, 0.5, 0.15),)),
    BoxEdgeTarget("right"), resolution=40, band_cells=8,
))
speeds = constant_speed_field(room, 1.0)
vf = solve_value_function(room, speeds, n_dirs=32)

start = np.array([0.15, 0.5])
path = integrate_optimal_trajectory(vf, speeds, room, 0.0, start, n_dirs=32)
print(f"exit time from {start}: {path.exit_time:.4f} "
      f"(value predicts {vf.at(0.0, start):.4f})")
print(f"value conservation deviation: {check_dpp(vf, path):.5f}")
print(f"worst excursion outside the walls: "
      f"{check_state_constraint(path, room):.2e}")
slope = check_control_regularity(path, 0.0, 1.0, room.reach())
print(f"control turn rate {slope:.2f} <= bound "
      f"{control_regularity_bound(0.0, 1.0, room.reach()):.2f}")

print("\n-- penalized twin: walls replaced by a speed cutoff --")
pen = PenalizedSpeed(base=speeds, epsilon=0.06, epsilon0=np.inf)
twin = integrate_penalized_trajectory(pen, room, 0.0, start, n_dirs=32)
print(f"penalized exit time: {twin.exit_time:.4f} "
      f"(difference {abs(twin.exit_time - path.exit_time):.4f})")
print(f"max distance outside the domain: "
      f"{check_state_constraint(twin, room):.2e} < epsilon = {pen.epsilon}")

cert = pmp_certificate(twin, pen)
print("adjoint certificate checks:")
for name, (ok, slack) in cert.checks.items():
    print(f"  {name:22s} {'ok' if ok else 'FAIL'}  slack={slack:.3g}")
