"""Fixed-point iteration, residual diagnostics, and the test-function bank."""

import numpy as np
import pytest

from mfg_mintime.congestion import (
    ConstantCongestion,
    KernelCongestion,
    constant_speed_field,
)
from mfg_mintime.equilibrium import (
    EquilibriumConfig,
    EquilibriumResult,
    SpaceTimeBump,
    best_response,
    continuity_residual,
    equilibrium_residual,
    fixed_point_iterate,
    make_test_bank,
    mfg_boundary_checks,
    stationary_horizon,
)
from mfg_mintime.errors import BankSupportError
from mfg_mintime.geometry import DomainSpec, IntervalEndTarget, Interval, \
    build_domain
from mfg_mintime.hjb import solve_value_function
from mfg_mintime.measures import (
    ParticleEnsemble,
    UniformM0,
    pushforward_series,
    sample_initial_particles,
    sup_wasserstein1,
)
from mfg_mintime.trajectories import integrate_feedback_batch


@pytest.fixture(scope="module")
def small_domain():
    return build_domain(DomainSpec(Interval(0.0, 1.0),
                                   IntervalEndTarget("right"),
                                   resolution=60, band_cells=10))


def small_cfg(domain, k_min, **kw):
    dt = 0.5 * domain.cell_size
    args = dict(damping=0.5, max_iters=30, w1_tol=2.0 * domain.cell_size,
                particle_count=300,
                times=stationary_horizon(domain, k_min, dt),
                bandwidth=2.0 * domain.cell_size, n_dirs=2, seed=9)
    args.update(kw)
    return EquilibriumConfig(**args)


CONGESTED = dict(g_intercept=1.0, g_slope=0.15, k_min=0.55, k_max=1.0,
                 chi_radius=0.3)


def test_constant_model_decoupled(small_domain):
    d = small_domain
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    cfg = small_cfg(d, 1.0)
    initial = sample_initial_particles(UniformM0(Interval(0.1, 0.4)), d,
                                       cfg.particle_count, cfg.seed)
    frozen = pushforward_series(initial, d, cfg.times, cfg.bandwidth)
    shifted_grids = [np.roll(g, 3) for g in frozen.grids]
    other = pushforward_series(initial, d, cfg.times, cfg.bandwidth)
    other.grids = shifted_grids
    ens1, _, _ = best_response(d, model, frozen, initial)
    ens2, _, _ = best_response(d, model, other, initial)
    for a, b in zip(ens1.trajectories, ens2.trajectories):
        assert np.array_equal(a.points, b.points)
        assert a.exit_time == b.exit_time


def test_full_damping_idempotent(small_domain):
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    cfg = small_cfg(small_domain, 1.0, damping=1.0, max_iters=3)
    res = fixed_point_iterate(small_domain, model, UniformM0(Interval(0.1, 0.4)),
                              cfg)
    assert res.converged
    assert len(res.gaps) >= 2
    assert res.gaps[1] == 0.0


def test_congestion_free_exits_match_analytic(small_domain):
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    cfg = small_cfg(small_domain, 1.0, max_iters=2)
    res = fixed_point_iterate(small_domain, model, UniformM0(Interval(0.1, 0.4)),
                              cfg)
    x0 = res.ensemble.positions_at(0.0).ravel()
    exits = np.array([tr.exit_time for tr in res.ensemble.trajectories])
    tol = 3.0 * max(cfg.times[1], small_domain.cell_size) * 2.0
    assert np.max(np.abs(exits - (1.0 - x0))) <= tol


def test_congestion_slows_every_particle(small_domain):
    free = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    jam = KernelCongestion(**CONGESTED)
    cfg_free = small_cfg(small_domain, 1.0, max_iters=2)
    cfg_jam = small_cfg(small_domain, jam.k_min, max_iters=8)
    res_free = fixed_point_iterate(small_domain, free,
                                   UniformM0(Interval(0.1, 0.4)), cfg_free)
    res_jam = fixed_point_iterate(small_domain, jam,
                                  UniformM0(Interval(0.1, 0.4)), cfg_jam)
    free_exits = np.array([t.exit_time for t in res_free.ensemble.trajectories])
    jam_exits = np.array([t.exit_time for t in res_jam.ensemble.trajectories])
    assert np.all(jam_exits >= free_exits - 1e-9)
    assert jam_exits.mean() > free_exits.mean() + 0.05


def test_fixed_point_converges_and_is_consistent(small_domain):
    model = KernelCongestion(**CONGESTED)
    cfg = small_cfg(small_domain, model.k_min)
    res = fixed_point_iterate(small_domain, model,
                              UniformM0(Interval(0.1, 0.4)), cfg)
    assert res.converged
    assert res.iterations <= 30
    assert res.status == 0
    # gap history decreases after the opening transient
    gaps = res.gaps
    assert all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(1, len(gaps) - 1))
    # re-applying the best response barely moves the densities
    initial = sample_initial_particles(UniformM0(Interval(0.1, 0.4)),
                                       small_domain, cfg.particle_count,
                                       cfg.seed)
    ens2, _, _ = best_response(small_domain, model, res.densities, initial,
                               n_dirs=cfg.n_dirs)
    push2 = pushforward_series(ens2, small_domain, cfg.times, cfg.bandwidth)
    assert sup_wasserstein1(push2, res.densities, small_domain) <= \
        2.0 * cfg.w1_tol
    # every report key is present
    for key in ("continuity_residual", "hj_residual_q50", "hj_residual_q90",
                "hj_residual_max", "target_value_max", "boundary_margin_min",
                "outflow_strip_mass", "outflow_tail_bound", "optimality_gap",
                "mc_floor_estimate", "unstopped_fraction", "iterations",
                "converged", "final_gap"):
        assert key in res.residual_report


def test_non_convergence_is_status_not_exception(small_domain):
    model = KernelCongestion(**CONGESTED)
    cfg = small_cfg(small_domain, model.k_min, max_iters=1)
    res = fixed_point_iterate(small_domain, model,
                              UniformM0(Interval(0.1, 0.4)), cfg)
    assert not res.converged
    assert res.status == 3
    assert len(res.gaps) == 1


def test_negative_control_residual(small_domain):
    model = KernelCongestion(**CONGESTED)
    cfg = small_cfg(small_domain, model.k_min)
    res = fixed_point_iterate(small_domain, model,
                              UniformM0(Interval(0.1, 0.4)), cfg)
    converged_resid = res.optimality_gap

    # trajectories from a mismatched constant slow field, frozen densities
    initial = sample_initial_particles(UniformM0(Interval(0.1, 0.4)),
                                       small_domain, cfg.particle_count,
                                       cfg.seed)
    frozen = pushforward_series(initial, small_domain, cfg.times,
                                cfg.bandwidth)
    slow = constant_speed_field(small_domain, model.k_min, k_min=model.k_min,
                                k_max=model.k_max)
    vf_slow = solve_value_function(small_domain, slow, n_dirs=2)
    control_trajs = integrate_feedback_batch(
        vf_slow, slow, small_domain, 0.0, initial.positions_at(0.0), n_dirs=2
    )
    ens = ParticleEnsemble(count=initial.count,
                           weights=initial.weights.copy(),
                           trajectories=control_trajs, seed=initial.seed)
    control = EquilibriumResult(
        ensemble=ens, densities=frozen,
        value_function=res.value_function, speed_field=res.speed_field,
        gaps=[], optimality_gap=0.0, residual_report={}, converged=True,
        iterations=0,
    )
    control_resid = equilibrium_residual(control, small_domain)
    assert control_resid > 10.0 * max(converged_resid, 1e-6)


def test_continuity_residual_single_particle_chain_rule(small_domain):
    """One particle: the weak form telescopes to a path integral of the
    chain rule, so the residual is pure quadrature error."""
    from mfg_mintime.measures import PointMassesM0

    d = small_domain
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    cfg = small_cfg(d, 1.0, particle_count=1, max_iters=2, bandwidth=0.05)
    res = fixed_point_iterate(d, model, PointMassesM0(((0.15,),), (1.0,)), cfg)
    bank = make_test_bank(d, float(cfg.times[-1]), bandwidth=cfg.bandwidth)
    psi = bank[0]
    # independent oracle: integrate the chain rule along the stored path
    tr = res.ensemble.trajectories[0]
    total = 0.0
    for i in range(len(tr.points) - 1):
        t = i * tr.dt
        mid = 0.5 * (tr.points[i] + tr.points[i + 1])
        vel = (tr.points[i + 1] - tr.points[i]) / tr.dt
        total += tr.dt * (psi.dt(t + 0.5 * tr.dt, mid[None, :])[0]
                          + float(vel @ psi.grad(t + 0.5 * tr.dt,
                                                 mid[None, :])[0]))
    start = psi.value(0.0, tr.points[0][None, :])[0]
    end = psi.value(len(tr.points) * tr.dt, tr.points[-1][None, :])[0]
    assert abs(total - (end - start)) <= 1e-3  # the oracle telescopes
    resid = continuity_residual(res, d, [psi])
    assert resid <= 0.05  # kernel smearing + first-order quadrature


def test_bank_support_errors(small_domain):
    good = make_test_bank(small_domain, 1.0)
    assert len(good) >= 1
    bad_time = [SpaceTimeBump(0.1, 0.5, np.array([0.5]), 0.1)]
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    cfg = small_cfg(small_domain, 1.0, max_iters=2)
    res = fixed_point_iterate(small_domain, model,
                              UniformM0(Interval(0.1, 0.4)), cfg)
    with pytest.raises(BankSupportError):
        continuity_residual(res, small_domain, bad_time)
    bad_space = [SpaceTimeBump(0.5, 0.2, np.array([0.99]), 0.1)]
    with pytest.raises(BankSupportError):
        continuity_residual(res, small_domain, bad_space)


def test_boundary_checks_structure(small_domain):
    model = KernelCongestion(**CONGESTED)
    cfg = small_cfg(small_domain, model.k_min, max_iters=4)
    res = fixed_point_iterate(small_domain, model,
                              UniformM0(Interval(0.1, 0.4)), cfg)
    bc = mfg_boundary_checks(res, small_domain)
    assert bc["target_value_max"] == 0.0
    assert bc["boundary_margin_min"] >= -5.0 * small_domain.cell_size
    assert bc["outflow_strip_mass"] <= bc["outflow_tail_bound"]


def test_refining_particles_does_not_worsen_gap(small_domain):
    model = KernelCongestion(**CONGESTED)
    cfg_a = small_cfg(small_domain, model.k_min, particle_count=300)
    cfg_b = small_cfg(small_domain, model.k_min, particle_count=600)
    res_a = fixed_point_iterate(small_domain, model,
                                UniformM0(Interval(0.1, 0.4)), cfg_a)
    res_b = fixed_point_iterate(small_domain, model,
                                UniformM0(Interval(0.1, 0.4)), cfg_b)
    floor = res_a.residual_report["mc_floor_estimate"]
    assert res_b.optimality_gap <= res_a.optimality_gap + floor
