"""Certificate suite: re-derives every guarantee on a concrete scenario.

Each check pairs a measured quantity with its tolerance and reports
pass/fail; failures are report entries, never exceptions.  The scenario
field is sampled from the initial crowd held in place, which keeps the
suite independent of the equilibrium iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .congestion import (
    PenalizedSpeed,
    constant_speed_field,
    epsilon0_estimate,
    sample_speed_field,
)
from .equilibrium import (
    EquilibriumResult,
    batch_dpp_deviation,
    equilibrium_residual,
    mfg_boundary_checks,
    stationary_horizon,
)
from .geometry import Domain, build_domain
from .hjb import dijkstra_oracle, solve_stationary_value, solve_value_function
from .measures import (
    ParticleEnsemble,
    pushforward_series,
    sample_initial_particles,
    wasserstein1,
)
from .trajectories import (
    check_control_regularity,
    check_state_constraint,
    control_regularity_bound,
    integrate_feedback_batch,
    integrate_penalized_batch,
    pmp_certificate,
)

CERT_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: float
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: value={self.value:.6g} "
                f"bound={self.bound:.6g} {self.note}".rstrip())


@dataclass
class ScenarioContext:
    """Everything the suite needs, built once per scenario."""

    cfg: ScenarioConfig
    domain: Domain
    times: np.ndarray
    initial: object
    frozen_densities: object
    field: object
    vf: object
    eps0: float
    eps0_effective: float
    epsilon_run: float


def model_k_min(model):
    return model.k_min if not model.is_constant else min(
        model.k_max, max(model.k0, model.k_min)
    )


def build_context(cfg: ScenarioConfig) -> ScenarioContext:
    """Rasterize the scenario and sample its frozen-crowd field."""
    domain = build_domain(cfg.domain_spec)
    k_min = model_k_min(cfg.model)
    times = stationary_horizon(domain, k_min, cfg.numerics.dt)
    initial = sample_initial_particles(
        cfg.m0_spec, domain, cfg.equilibrium.particle_count,
        cfg.equilibrium.seed,
    )
    frozen = pushforward_series(initial, domain, times,
                                cfg.numerics.bandwidth)
    field = sample_speed_field(cfg.model, frozen, domain)
    vf = solve_value_function(domain, field, n_dirs=cfg.equilibrium.n_dirs)
    eps0 = epsilon0_estimate(field, domain)
    eps0_eff = min(eps0, domain.reach())
    if cfg.numerics.epsilon is not None:
        eps_run = cfg.numerics.epsilon
    elif np.isfinite(eps0):
        eps_run = min(0.5 * eps0, 0.45 * domain.band_width)
    else:
        eps_run = 0.45 * domain.band_width
    return ScenarioContext(
        cfg=cfg, domain=domain, times=times, initial=initial,
        frozen_densities=frozen, field=field, vf=vf, eps0=eps0,
        eps0_effective=eps0_eff, epsilon_run=eps_run,
    )


def seeded_starts(ctx: ScenarioContext, count: int = 100):
    """Deterministic start points spread over the inside, off the target."""
    rng = np.random.default_rng(ctx.cfg.equilibrium.seed + 1)
    nodes = ctx.domain.node_coordinates()[ctx.domain._inside_flat]
    ok = ctx.domain.target_distance(nodes) > 3.0 * ctx.domain.cell_size
    cand = nodes[ok]
    picks = rng.choice(len(cand), size=min(count, len(cand)), replace=False)
    return cand[picks]


def run_verification_suite(cfg: ScenarioConfig, quiet: bool = False):
    """Run every certificate on one scenario; returns the check list."""
    ctx = build_context(cfg)
    checks = []
    add = checks.append
    domain, field, vf = ctx.domain, ctx.field, ctx.vf
    h = domain.cell_size
    dt = cfg.numerics.dt
    scale = max(dt, h)

    # 1. stationary solver against the exact graph oracle
    stat = solve_stationary_value(domain, field.values[-1])
    oracle = dijkstra_oracle(domain, field.values[-1])
    inside = domain.inside_mask
    slack = np.abs(stat[inside] - oracle[inside]) - 0.083 * oracle[inside]
    bound1 = 2.0 * h / field.k_min
    add(CheckResult("oracle_equivalence", bool(np.max(slack) <= bound1),
                    float(np.max(slack)), bound1,
                    note="max(|solver-oracle| - 8.3% of value)"))

    # 2/3. conservation certificate and exit/value agreement on seeded starts
    starts = seeded_starts(ctx)
    trajs = integrate_feedback_batch(vf, field, domain, 0.0, starts,
                                     n_dirs=cfg.equilibrium.n_dirs)
    exits = np.array([tr.exit_time for tr in trajs])
    stopped = np.array([tr.stopped for tr in trajs])
    ens = ParticleEnsemble(
        count=len(trajs),
        weights=np.full(len(trajs), 1.0 / len(trajs)),
        trajectories=trajs, seed=cfg.equilibrium.seed + 1,
    )
    dev = batch_dpp_deviation(vf, ens)
    bounds = 5.0 * scale * (1.0 + np.where(stopped, exits, 0.0))
    ratio = np.max(dev / bounds)
    add(CheckResult("dpp_certificate", bool(np.all(stopped) and ratio <= 1.0),
                    float(np.max(dev)), float(np.max(bounds)),
                    note=f"worst ratio {ratio:.3f}"))
    start_vals = vf.interp(0.0, starts)
    exit_err = np.abs(exits - start_vals)
    add(CheckResult("exit_vs_value", bool(np.max(exit_err / bounds) <= 1.0),
                    float(np.max(exit_err)), float(np.max(bounds))))

    # 4. state constraints
    viol = max(check_state_constraint(tr, domain) for tr in trajs)
    add(CheckResult("state_constraint", viol <= cfg.numerics.constraint_tol,
                    viol, cfg.numerics.constraint_tol))

    # 5. control regularity
    lam = field.lipschitz_estimate
    reg_bound = control_regularity_bound(lam, field.k_max, ctx.eps0_effective)
    slopes = [check_control_regularity(tr, lam, field.k_max,
                                       ctx.eps0_effective)
              for tr in trajs if tr.stopped]
    worst_slope = max(slopes) if slopes else 0.0
    add(CheckResult("control_regularity", worst_slope <= reg_bound,
                    worst_slope, reg_bound,
                    note=f"L={lam:.3g} eps0_eff={ctx.eps0_effective:.3g}"))

    # 6. penalized equivalence on a subset of starts
    pen = PenalizedSpeed(base=field, epsilon=ctx.epsilon_run,
                         epsilon0=max(ctx.eps0, ctx.epsilon_run * 2.0))
    sub = starts[:20]
    pen_trajs, _pen_vf = integrate_penalized_batch(
        pen, domain, 0.0, sub, n_dirs=cfg.equilibrium.n_dirs
    )
    pen_exits = np.array([tr.exit_time for tr in pen_trajs])
    diff = np.abs(pen_exits - exits[:20])
    eq_bounds = 4.0 * scale * (1.0 + np.where(stopped[:20], exits[:20], 0.0))
    add(CheckResult(
        "penalized_equivalence",
        bool(all(tr.stopped for tr in pen_trajs)
             and np.max(diff / eq_bounds) <= 1.0),
        float(np.max(diff)), float(np.max(eq_bounds)),
        note=f"epsilon={ctx.epsilon_run:.4g}",
    ))
    out_d = max(check_state_constraint(tr, domain) for tr in pen_trajs)
    add(CheckResult("penalized_containment", out_d < ctx.epsilon_run,
                    out_d, ctx.epsilon_run,
                    note="max distance outside the domain"))

    # 7. adjoint certificates on penalized paths
    worst_ham = 0.0
    all_pass = True
    for tr in pen_trajs:
        if not tr.stopped:
            all_pass = False
            continue
        cert = pmp_certificate(tr, pen, cert_tol=CERT_TOL)
        worst_ham = max(worst_ham, cert.checks["hamiltonian_relation"][1])
        all_pass &= all(ok for ok, _ in cert.checks.values())
    add(CheckResult("pmp_certificate", all_pass, worst_ham, CERT_TOL,
                    note="worst hamiltonian-relation slack"))

    # 8. boundary conditions on the frozen-field pseudo-result
    pseudo = EquilibriumResult(
        ensemble=ens, densities=ctx.frozen_densities, value_function=vf,
        speed_field=field, gaps=[], optimality_gap=0.0, residual_report={},
        converged=True, iterations=0,
    )
    bc = mfg_boundary_checks(pseudo, domain,
                             outflow_tol=cfg.numerics.outflow_tol)
    add(CheckResult("target_value_zero", bc["target_value_max"] == 0.0,
                    bc["target_value_max"], 0.0))
    add(CheckResult("boundary_supersolution",
                    bc["boundary_margin_min"] >= -5.0 * h,
                    bc["boundary_margin_min"], -5.0 * h,
                    note="min outward-gradient margin"))
    add(CheckResult("outflow_mass", bc["outflow_strip_mass"]
                    <= bc["outflow_tail_bound"],
                    bc["outflow_strip_mass"], bc["outflow_tail_bound"]))

    # 9. metric axioms of the transport distance (coarsened when large)
    w1_dom = domain
    if domain._inside_flat.size > 700:
        from .geometry import DomainSpec

        spec = cfg.domain_spec
        factor = np.sqrt(domain._inside_flat.size / 500)
        res = int(np.ceil(max(spec.resolution / factor,
                              9.0 / spec.shape.narrowest_feature())))
        w1_dom = build_domain(DomainSpec(
            shape=spec.shape, target=spec.target, resolution=res,
            band_cells=spec.band_cells,
        ))
    rng = np.random.default_rng(7)
    sym_worst = 0.0
    tri_worst = 0.0
    for _ in range(6):
        grids = []
        for _k in range(3):
            g = np.zeros(w1_dom.grid_shape)
            g[w1_dom.inside_mask] = rng.random(int(w1_dom.inside_mask.sum()))
            g /= g.sum() * w1_dom.cell_size**w1_dom.dim
            grids.append(g)
        a, b, c = grids
        wab = wasserstein1(a, b, w1_dom)
        wba = wasserstein1(b, a, w1_dom)
        wac = wasserstein1(a, c, w1_dom)
        wcb = wasserstein1(c, b, w1_dom)
        sym_worst = max(sym_worst, abs(wab - wba))
        tri_worst = max(tri_worst, (wab - wac - wcb) / max(wab, 1e-300))
    add(CheckResult("w1_symmetry", sym_worst <= 1e-9, sym_worst, 1e-9))
    add(CheckResult("w1_triangle", tri_worst <= 1e-6, tri_worst, 1e-6,
                    note="relative slack"))

    # 10. optimality residual (negative control integrates under a
    #     mismatched constant slow field)
    if cfg.negative_control:
        slow = constant_speed_field(domain, field.k_min,
                                    k_min=field.k_min, k_max=field.k_max)
        vf_slow = solve_value_function(domain, slow,
                                       n_dirs=cfg.equilibrium.n_dirs)
        control_trajs = integrate_feedback_batch(
            vf_slow, slow, domain, 0.0, ctx.initial.positions_at(0.0),
            n_dirs=cfg.equilibrium.n_dirs,
        )
        ens_m0 = ParticleEnsemble(count=ctx.initial.count,
                                  weights=ctx.initial.weights.copy(),
                                  trajectories=control_trajs,
                                  seed=ctx.initial.seed)
    else:
        m0_trajs = integrate_feedback_batch(
            vf, field, domain, 0.0, ctx.initial.positions_at(0.0),
            n_dirs=cfg.equilibrium.n_dirs,
        )
        ens_m0 = ParticleEnsemble(count=ctx.initial.count,
                                  weights=ctx.initial.weights.copy(),
                                  trajectories=m0_trajs,
                                  seed=ctx.initial.seed)
    pseudo2 = EquilibriumResult(
        ensemble=ens_m0, densities=ctx.frozen_densities, value_function=vf,
        speed_field=field, gaps=[], optimality_gap=0.0, residual_report={},
        converged=True, iterations=0,
    )
    resid = equilibrium_residual(pseudo2, domain)
    mean_exit = float(np.mean([tr.exit_time for tr in ens_m0.trajectories
                               if np.isfinite(tr.exit_time)] or [0.0]))
    resid_bound = 5.0 * scale * (1.0 + mean_exit)
    add(CheckResult("equilibrium_residual", resid <= resid_bound, resid,
                    resid_bound,
                    note="negative control" if cfg.negative_control else ""))

    if not quiet:
        for c in checks:
            print(c.line())
    return checks
