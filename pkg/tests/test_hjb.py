"""Value-function solvers, residuals, and descent directions."""

import numpy as np
import pytest

from mfg_mintime.congestion import SpeedField, constant_speed_field
from mfg_mintime.errors import (
    AmbiguousGradientError,
    CFLViolationError,
)
from mfg_mintime.geometry import (
    Box,
    BoxEdgeTarget,
    DomainSpec,
    IntervalEndTarget,
    Interval,
    build_domain,
)
from mfg_mintime.hjb import (
    boundary_supersolution_check,
    dijkstra_oracle,
    direction_set,
    hj_residual,
    maximal_descent_set,
    normalized_gradient,
    read_grid_slice,
    solve_stationary_value,
    solve_value_function,
    write_grid_slice,
)


class FullBoundaryTarget:
    """Whole boundary as the target (test-local)."""

    def distance(self, pts, shape):
        return np.abs(shape.signed_distance(np.atleast_2d(pts)))


def bellman_ford_oracle(domain, speed):
    """Brute-force edge relaxation; the independent cross-check."""
    rows, cols, lengths = domain._edges
    k = np.asarray(speed).ravel()[domain._inside_flat]
    cost = lengths * 0.5 * (1.0 / k[rows] + 1.0 / k[cols])
    n = len(domain._inside_flat)
    dist = np.full(n, np.inf)
    targets = domain._compact_of_flat[np.flatnonzero(domain.target_mask.ravel())]
    dist[targets] = 0.0
    edges = list(zip(rows, cols, cost)) + list(zip(cols, rows, cost))
    for _ in range(n):
        changed = False
        for u, v, c in edges:
            if dist[u] + c < dist[v] - 1e-15:
                dist[v] = dist[u] + c
                changed = True
        if not changed:
            break
    out = np.full(domain.grid_shape, np.nan).ravel()
    out[domain._inside_flat] = dist
    return out.reshape(domain.grid_shape)


def test_stationary_corridor_analytic(corridor_domain, corridor_field):
    stat = solve_stationary_value(corridor_domain, corridor_field.values[-1])
    nodes = corridor_domain.node_coordinates().ravel()
    ins = corridor_domain.inside_mask
    assert np.max(np.abs(stat[ins] - (1.0 - nodes[ins]))) <= \
        2.0 * corridor_domain.cell_size


def test_stationary_full_boundary_box_is_distance_function():
    d = build_domain(DomainSpec(Box(0, 1, 0, 1), FullBoundaryTarget(),
                                resolution=25, band_cells=4))
    field = constant_speed_field(d, 1.0)
    stat = solve_stationary_value(d, field.values[-1])
    nodes = d.node_coordinates()[d._inside_flat]
    exact = -d.sdf(nodes)
    got = stat.ravel()[d._inside_flat]
    assert np.max(np.abs(got - exact)) <= 0.083 * exact.max() + 2 * d.cell_size


def test_dijkstra_uniform_scaling(box_domain):
    ones = np.ones(box_domain.grid_shape)
    twos = 2.0 * ones
    d1 = dijkstra_oracle(box_domain, ones)
    d2 = dijkstra_oracle(box_domain, twos)
    ins = box_domain.inside_mask
    assert np.allclose(d2[ins], d1[ins] / 2.0, atol=1e-12)


def test_dijkstra_against_bellman_ford(rng):
    d = build_domain(DomainSpec(Box(0, 1, 0, 1), BoxEdgeTarget("right"),
                                resolution=19, band_cells=3))
    speed = np.where(d.inside_mask, 0.5 + rng.random(d.grid_shape), 1.0)
    got = dijkstra_oracle(d, speed)
    expect = bellman_ford_oracle(d, speed)
    ins = d.inside_mask
    assert np.allclose(got[ins], expect[ins], atol=1e-10)


def test_value_function_piecewise_time_oracle(corridor_domain):
    # speed 1 before t=0.5 and 2 after; from x=0 the crossing integrates to
    # 0.5 + (1 - 0.5)/2 = 0.75 (computed by the fine ODE below)
    d = corridor_domain
    dt = 0.0025
    times = np.round(np.arange(0.0, 0.5 + 1e-12, dt), 10)
    vals = np.empty((len(times),) + d.grid_shape)
    for i, t in enumerate(times):
        vals[i] = 1.0 if t < 0.5 - 1e-12 else 2.0
    field = SpeedField(times=times, values=vals, stationary_from=0.5,
                       lipschitz_estimate=0.0, k_min=1.0, k_max=2.0, domain=d)

    x, t, hh = 0.0, 0.0, dt / 50.0
    while x < 1.0:
        x += hh * (1.0 if t < 0.5 else 2.0)
        t += hh
    expected = t
    assert expected == pytest.approx(0.75, abs=1e-3)

    vf = solve_value_function(d, field)
    got = vf.at(0.0, np.array([0.0]))
    assert abs(got - expected) <= 3.0 * max(dt, d.cell_size)


def test_time_independent_field_is_stationary(corridor_domain):
    d = corridor_domain
    dt = 0.005
    times = dt * np.arange(40)
    vals = np.full((len(times),) + d.grid_shape, 1.0)
    field = SpeedField(times=times, values=vals, stationary_from=times[-1],
                       lipschitz_estimate=0.0, k_min=1.0, k_max=1.0, domain=d)
    vf = solve_value_function(d, field)
    dev = np.nanmax(np.abs(vf.values - vf.values[-1][None, ...]))
    assert dev <= 1e-9


def test_target_values_exactly_zero(box_vf, box_domain):
    assert np.nanmax(np.abs(box_vf.values[:, box_domain.target_mask])) == 0.0


def test_time_slices_lipschitz_with_drift(corridor_domain):
    # |slice difference| per step is bounded by 1 plus speed times the
    # spatial slope, up to scheme tolerance
    d = corridor_domain
    dt = 0.0025
    times = np.round(np.arange(0.0, 0.5 + 1e-12, dt), 10)
    vals = np.empty((len(times),) + d.grid_shape)
    for i, t in enumerate(times):
        vals[i] = 1.0 if t < 0.5 - 1e-12 else 2.0
    field = SpeedField(times=times, values=vals, stationary_from=0.5,
                       lipschitz_estimate=0.0, k_min=1.0, k_max=2.0, domain=d)
    vf = solve_value_function(d, field)
    ins = d.inside_mask
    grad = np.abs(np.diff(vf.values[:, ins], axis=1)) / d.cell_size
    lip_x = grad.max()
    dphi = np.abs(np.diff(vf.values[:, ins], axis=0)).max()
    assert dphi <= dt * (1.0 + 2.0 * lip_x) + 5.0 * d.cell_size * dt


def test_cfl_violation_raises(corridor_domain):
    d = corridor_domain
    dt = d.cell_size  # too large for speed 1
    times = dt * np.arange(5)
    vals = np.full((5,) + d.grid_shape, 1.0)
    field = SpeedField(times=times, values=vals, stationary_from=times[-1],
                       lipschitz_estimate=0.0, k_min=1.0, k_max=1.0, domain=d)
    with pytest.raises(CFLViolationError):
        solve_value_function(d, field)


def test_dpp_supersolution_property(box_vf, box_field, box_domain, rng):
    d = box_domain
    vf = box_vf
    dt = 0.4 * d.cell_size  # sweep step used for the stationary problem
    dirs = direction_set(2, 24)
    nodes = d.node_coordinates()[d._inside_flat]
    for _ in range(200):
        x = nodes[rng.integers(len(nodes))]
        u = dirs[rng.integers(len(dirs))]
        k = box_field.at(0.0, x[None, :])[0]
        z = d.project_points((x + dt * k * u)[None, :])[0]
        lhs = vf.interp(0.0, z[None, :])[0] + dt
        rhs = vf.interp(0.0, x[None, :])[0]
        assert lhs >= rhs - 1e-9


def test_monotonicity_in_speed(box_domain):
    slow = constant_speed_field(box_domain, 1.0)
    fast = constant_speed_field(box_domain, 1.2)
    vf_slow = solve_value_function(box_domain, slow, n_dirs=24)
    vf_fast = solve_value_function(box_domain, fast, n_dirs=24)
    ins = box_domain.inside_mask
    assert np.all(vf_fast.values[-1][ins] <= vf_slow.values[-1][ins] + 1e-9)


def test_hj_residual_smooth_points(corridor_vf, corridor_field,
                                   corridor_domain):
    r = hj_residual(corridor_vf, corridor_field, 0.0, np.array([0.5]))
    assert abs(r) <= 5.0 * corridor_domain.cell_size
    with pytest.raises(ValueError):
        hj_residual(corridor_vf, corridor_field, 0.0, np.array([0.999]))


def test_hj_residual_tail_times(box_vf, box_field):
    r = hj_residual(box_vf, box_field, 0.0, np.array([0.4, 0.37]))
    assert np.isnan(r) or abs(r) <= 0.12


def test_boundary_check_corridor(corridor_vf, corridor_domain):
    g = boundary_supersolution_check(corridor_vf, corridor_domain, 0.0,
                                     np.array([0.0]))
    assert g == pytest.approx(-1.0, abs=0.05)
    with pytest.raises(ValueError):
        boundary_supersolution_check(corridor_vf, corridor_domain, 0.0,
                                     np.array([1.0]))


def test_boundary_check_box_top_edge(box_vf, box_domain):
    g = boundary_supersolution_check(box_vf, box_domain, 0.0,
                                     np.array([0.5, 1.0]))
    assert np.isfinite(g)
    assert abs(g) <= 5.0 * box_domain.cell_size


def test_descent_set_corridor_singleton(corridor_vf, corridor_field):
    ds = maximal_descent_set(corridor_vf, corridor_field, 0.0,
                             np.array([0.5]), h_quot=0.02)
    assert ds.directions.shape == (1, 1)
    assert ds.directions[0, 0] == 1.0
    assert ds.rate_gap <= 2.0 * 0.01 / 0.02
    g = normalized_gradient(corridor_vf, corridor_field, 0.0,
                            np.array([0.5]), h_quot=0.02)
    assert g[0] == -1.0


def test_descent_cone_point_is_ambiguous():
    d = build_domain(DomainSpec(Box(0, 1, 0, 1), FullBoundaryTarget(),
                                resolution=25, band_cells=4))
    field = constant_speed_field(d, 1.0)
    vf = solve_value_function(d, field, n_dirs=24)
    with pytest.raises(AmbiguousGradientError):
        normalized_gradient(vf, field, 0.0, np.array([0.5, 0.5]),
                            h_quot=4 * d.cell_size, n_dirs=24)


def test_normalized_gradient_matches_finite_differences(box_vf, box_field,
                                                        box_domain):
    x = np.array([0.4, 0.35])
    g = normalized_gradient(box_vf, box_field, 0.0, x, n_dirs=32)
    h = box_domain.cell_size
    fd = np.zeros(2)
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        fd[a] = (box_vf.at(0.0, x + e) - box_vf.at(0.0, x - e)) / (2 * h)
    fd /= np.linalg.norm(fd)
    angle = np.degrees(np.arccos(np.clip(np.dot(g, fd), -1, 1)))
    assert angle <= 15.0


def test_grid_slice_round_trip(tmp_path, corridor_vf, corridor_domain):
    path = tmp_path / "slice.bin"
    write_grid_slice(path, 0.25, 0.005, corridor_domain.cell_size,
                     corridor_domain.origin, corridor_vf.values[-1])
    back = read_grid_slice(path)
    assert back["t"] == 0.25
    assert back["cell_size"] == corridor_domain.cell_size
    assert np.allclose(back["grid"], corridor_vf.values[-1], equal_nan=True)
