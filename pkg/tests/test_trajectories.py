"""Feedback paths, exit times, constraint checks, and adjoint certificates."""

import numpy as np
import pytest

from mfg_mintime.congestion import PenalizedSpeed
from mfg_mintime.errors import DegenerateCertificateError, NotStoppedError
from mfg_mintime.hjb import dijkstra_oracle
from mfg_mintime.measures import ParticleEnsemble
from mfg_mintime.trajectories import (
    Trajectory,
    check_control_regularity,
    check_dpp,
    check_state_constraint,
    control_regularity_bound,
    first_exit_time,
    integrate_feedback_batch,
    integrate_optimal_trajectory,
    integrate_penalized_trajectory,
    pmp_certificate,
)


@pytest.fixture(scope="module")
def corridor_traj(corridor_vf, corridor_field, corridor_domain):
    return integrate_optimal_trajectory(
        corridor_vf, corridor_field, corridor_domain, 0.0, np.array([0.25])
    )


def test_corridor_exit_time(corridor_traj, corridor_domain, corridor_vf):
    tol = 3.0 * max(corridor_traj.dt, corridor_domain.cell_size)
    assert corridor_traj.stopped
    assert abs(corridor_traj.exit_time - 0.75) <= tol
    # straight path: positions increase monotonically
    xs = corridor_traj.points.ravel()
    assert np.all(np.diff(xs) >= -1e-12)


def test_start_on_target(corridor_vf, corridor_field, corridor_domain):
    tr = integrate_optimal_trajectory(
        corridor_vf, corridor_field, corridor_domain, 0.0, np.array([1.0])
    )
    assert tr.exit_time == 0.0
    assert tr.stopped
    assert len(tr.points) == 1


def test_obstacle_wrap_matches_oracle(obstacle_vf, obstacle_field,
                                      obstacle_domain):
    d = obstacle_domain
    x0 = np.array([0.2, 0.5])  # directly behind the column
    tr = integrate_optimal_trajectory(obstacle_vf, obstacle_field, d, 0.0, x0,
                                      n_dirs=32)
    assert tr.stopped
    oracle = dijkstra_oracle(d, obstacle_field.values[-1])
    idx = tuple(np.rint((x0 - d.origin) / d.cell_size).astype(int))
    expected = oracle[idx]
    tol = 0.083 * expected + 5.0 * max(tr.dt, d.cell_size) * (1 + expected)
    assert abs(tr.exit_time - expected) <= tol
    assert check_state_constraint(tr, d) <= d.cell_size / 10.0


def test_first_exit_time_conventions(corridor_traj, corridor_domain,
                                     corridor_vf):
    assert abs(first_exit_time(corridor_traj, corridor_domain)
               - corridor_traj.exit_time) <= corridor_traj.dt
    still = Trajectory(t0=0.0, dt=0.01,
                       points=np.array([[1.0]]),
                       controls=np.zeros((1, 1)),
                       exit_time=0.0, stopped=True)
    assert first_exit_time(still, corridor_domain) == 0.0
    wander = Trajectory(t0=0.0, dt=0.01,
                        points=np.full((5, 1), 0.3),
                        controls=np.zeros((5, 1)),
                        exit_time=np.inf, stopped=False)
    assert first_exit_time(wander, corridor_domain) == np.inf


def test_check_dpp_optimal_vs_perturbed(box_vf, box_field, box_domain):
    starts = np.array([[0.2, 0.3], [0.25, 0.6], [0.3, 0.45]])
    good = integrate_feedback_batch(box_vf, box_field, box_domain, 0.0,
                                    starts, n_dirs=32)
    bad = integrate_feedback_batch(box_vf, box_field, box_domain, 0.0,
                                   starts, n_dirs=32,
                                   control_rotation_deg=45.0)
    for g, b in zip(good, bad):
        assert g.stopped
        dev_g = check_dpp(box_vf, g)
        tol = 5.0 * max(g.dt, box_domain.cell_size) * (1.0 + g.exit_time)
        assert dev_g <= tol
        if b.stopped:
            assert check_dpp(box_vf, b) > 10.0 * dev_g


def test_check_dpp_requires_stopped(corridor_vf):
    tr = Trajectory(t0=0.0, dt=0.01, points=np.zeros((3, 1)),
                    controls=np.zeros((3, 1)), exit_time=np.inf,
                    stopped=False)
    with pytest.raises(NotStoppedError):
        check_dpp(corridor_vf, tr)


def test_check_dpp_zero_length(corridor_vf, corridor_field, corridor_domain):
    tr = integrate_optimal_trajectory(
        corridor_vf, corridor_field, corridor_domain, 0.0, np.array([1.0])
    )
    assert check_dpp(corridor_vf, tr) <= 1e-9


def test_state_constraint_synthetic(corridor_domain):
    tr = Trajectory(t0=0.0, dt=0.01,
                    points=np.array([[0.5], [1.01]]),
                    controls=np.zeros((2, 1)),
                    exit_time=np.inf, stopped=False)
    assert check_state_constraint(tr, corridor_domain) == pytest.approx(0.01)


def test_control_regularity_cases(corridor_traj):
    assert check_control_regularity(corridor_traj, 0.0, 1.0, np.inf) == 0.0
    dt = 0.01
    n = 30
    zig = np.zeros((n, 2))
    zig[:, 1] = (-1.0) ** np.arange(n)
    zig[:, 0] = 0.3
    zig /= np.linalg.norm(zig, axis=1, keepdims=True)
    tr = Trajectory(t0=0.0, dt=dt,
                    points=np.zeros((n, 2)),
                    controls=zig, exit_time=(n - 1) * dt, stopped=True)
    slope = check_control_regularity(tr, 0.0, 1.0, 0.5)
    assert slope >= 1.5 / dt  # near the reversal scale 2/dt
    assert slope > control_regularity_bound(0.0, 1.0, 0.5)


def test_penalized_equivalence_corridor(corridor_vf, corridor_field,
                                        corridor_domain, corridor_traj):
    pen = PenalizedSpeed(base=corridor_field, epsilon=0.05, epsilon0=np.inf)
    trp = integrate_penalized_trajectory(pen, corridor_domain, 0.0,
                                         np.array([0.25]))
    assert trp.stopped
    tol = 2.0 * 3.0 * max(trp.dt, corridor_domain.cell_size) * \
        (1.0 + corridor_traj.exit_time)
    assert abs(trp.exit_time - corridor_traj.exit_time) <= tol
    assert check_state_constraint(trp, corridor_domain) < 0.05


def test_penalized_from_target(corridor_field, corridor_domain):
    pen = PenalizedSpeed(base=corridor_field, epsilon=0.05, epsilon0=np.inf)
    tr = integrate_penalized_trajectory(pen, corridor_domain, 0.0,
                                        np.array([1.0]))
    assert tr.exit_time == 0.0


def test_pmp_certificate_constant_speed(corridor_field, corridor_domain):
    pen = PenalizedSpeed(base=corridor_field, epsilon=0.05, epsilon0=np.inf)
    tr = integrate_penalized_trajectory(pen, corridor_domain, 0.0,
                                        np.array([0.3]))
    cert = pmp_certificate(tr, pen)
    mags = np.linalg.norm(cert.costates, axis=1)
    assert np.allclose(mags, 1.0, atol=1e-9)
    assert np.allclose(cert.hamiltonian_values, 0.0, atol=1e-12)
    assert all(ok for ok, _ in cert.checks.values())
    assert cert.checks["nontriviality"][1] == pytest.approx(2.0)
    assert cert.cost_multiplier == 1


def test_pmp_certificate_obstacle(obstacle_field, obstacle_domain):
    from mfg_mintime.trajectories import integrate_penalized_batch

    pen = PenalizedSpeed(base=obstacle_field, epsilon=0.06, epsilon0=np.inf)
    trs, _vf_pen = integrate_penalized_batch(
        pen, obstacle_domain, 0.0,
        np.array([[0.2, 0.5], [0.15, 0.35]]), n_dirs=32,
    )
    for tr in trs:
        assert tr.stopped
        assert check_state_constraint(tr, obstacle_domain) < 0.06
        cert = pmp_certificate(tr, pen)
        assert cert.checks["hamiltonian_relation"][1] <= 1e-3
        assert cert.checks["costate_nonvanishing"][1] > 0.0


def test_pmp_degenerate_outside_band(corridor_field, corridor_domain):
    pen = PenalizedSpeed(base=corridor_field, epsilon=0.02, epsilon0=np.inf)
    fake = Trajectory(t0=0.0, dt=0.01,
                      points=np.array([[0.5], [1.2]]),
                      controls=np.array([[1.0], [0.0]]),
                      exit_time=0.01, stopped=True)
    with pytest.raises(DegenerateCertificateError):
        pmp_certificate(fake, pen)


def test_horizon_cap_flags_not_raises(corridor_domain, corridor_field):
    # a value function with a tiny horizon forces the cap
    from mfg_mintime.hjb import solve_value_function

    vf = solve_value_function(corridor_domain, corridor_field)
    vf.horizon_bound = 0.05
    trs = integrate_feedback_batch(vf, corridor_field, corridor_domain, 0.0,
                                   np.array([[0.1]]))
    assert not trs[0].stopped
    assert trs[0].horizon_exceeded
    assert trs[0].exit_time == np.inf


def test_descent_singleton_along_optimal_paths(box_vf, box_field, box_domain):
    """Interior steps of smooth optimal paths see a unique travel direction."""
    from mfg_mintime.hjb import maximal_descent_set, ANGLE_TOL

    starts = np.array([[0.15, 0.35], [0.2, 0.6], [0.3, 0.5]])
    trajs = integrate_feedback_batch(box_vf, box_field, box_domain, 0.0,
                                     starts, n_dirs=32)
    singleton = 0
    total = 0
    for tr in trajs:
        i0, i_end = tr.active_slice()
        for i in range(i0 + 1, i_end - 1):
            t = i * tr.dt
            ds = maximal_descent_set(box_vf, box_field, t, tr.points[i],
                                     n_dirs=32)
            total += 1
            if len(ds.directions) == 0:
                continue
            mean = ds.directions.sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12 and np.min(
                ds.directions @ (mean / norm)
            ) >= np.cos(ANGLE_TOL):
                singleton += 1
    assert total > 50
    assert singleton / total >= 0.95
    # consecutive controls rotate no faster than the certified rate
    for tr in trajs:
        i0, i_end = tr.active_slice()
        ctrl = tr.controls[i0:i_end - 1]
        ctrl = ctrl[np.linalg.norm(ctrl, axis=1) > 1e-12]
        if len(ctrl) < 2:
            continue
        dots = np.clip(np.einsum("id,id->i", ctrl[:-1], ctrl[1:]), -1, 1)
        angles = np.arccos(dots)
        bound = 2.0 * (0.0 + box_field.k_max / box_domain.reach()) * tr.dt
        assert np.all(angles <= max(bound, 2.5 * 2 * np.pi / 32) + 1e-9)


def test_ensemble_weights_validation():
    tr = Trajectory(t0=0.0, dt=1.0, points=np.zeros((1, 1)),
                    controls=np.zeros((1, 1)), exit_time=0.0, stopped=True)
    with pytest.raises(Exception):
        ParticleEnsemble(count=2, weights=np.array([0.7, 0.7]),
                         trajectories=[tr, tr], seed=0)
