"""Find the crowd equilibrium of the congested corridor.

Damped best-response iteration from the frozen-crowd guess; the run
reports the W1 gap history and the coupled-system residuals.
"""

from mfg_mintime.config import load_preset
from mfg_mintime.equilibrium import fixed_point_iterate, stationary_horizon
from mfg_mintime.geometry import build_domain

cfg = load_preset("corridor-1d")
cfg.equilibrium.particle_count = 800  # smaller crowd for a quick demo
domain = build_domain(cfg.domain_spec)
cfg.equilibrium.times = stationary_horizon(domain, cfg.model.k_min,
                                           cfg.numerics.dt)

result = fixed_point_iterate(domain, cfg.model, cfg.m0_spec, cfg.equilibrium)

print(f"converged: {result.converged} after {result.iterations} iterations")
print("gap history:", " ".join(f"{g:.4f}" for g in result.gaps))
print(f"optimality gap: {result.optimality_gap:.4f} time units")
print("residual report:")
for key, value in sorted(result.residual_report.items()):
    print(f"  {key:24s} {value:.6g}")

exits = [tr.exit_time for tr in result.ensemble.trajectories]
print(f"\nexit times: mean {sum(exits) / len(exits):.3f}, "
      f"max {max(exits):.3f} (stationary horizon "
      f"{cfg.equilibrium.times[-1]:.3f})")
