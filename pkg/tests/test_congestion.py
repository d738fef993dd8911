"""Interaction term, speed fields, and the penalized cutoff."""

import numpy as np
import pytest

from mfg_mintime.congestion import (
    ConstantCongestion,
    KernelCongestion,
    PenalizedSpeed,
    SpeedField,
    constant_speed_field,
    epsilon0_estimate,
    evaluate_congestion,
    penalized_speed_at,
    sample_speed_field,
)
from mfg_mintime.errors import MFGError, NegativeDensityError
from mfg_mintime.measures import DensitySeries


def kernel_model(**kw):
    args = dict(g_intercept=2.0, g_slope=1.0, k_min=0.2, k_max=2.0,
                chi_radius=0.1, g_floor=0.2)
    args.update(kw)
    return KernelCongestion(**args)


def uniform_density(domain, value=1.0):
    g = np.where(domain.inside_mask, value, 0.0)
    mass = g[domain.inside_mask].sum() * domain.cell_size**domain.dim
    return g / mass if value != 0 else g


def test_constant_model_ignores_density(corridor_domain):
    model = ConstantCongestion(k0=1.0, k_min=1.0, k_max=1.0)
    dens = uniform_density(corridor_domain)
    x = np.array([0.5])
    assert evaluate_congestion(model, dens, corridor_domain, x) == 1.0


def test_zero_density_gives_g_of_zero(corridor_domain):
    model = kernel_model()
    dens = np.zeros(corridor_domain.grid_shape)
    v = evaluate_congestion(model, dens, corridor_domain, np.array([0.5]))
    assert v == pytest.approx(2.0)  # clamp(g(0)) = min(2.0, k_max)


def test_uniform_density_hits_g_of_one(corridor_domain):
    # chi integrates to one, so a unit density covering the whole kernel
    # footprint averages to exactly one: g(1) = max(0.2, 2 - 1) = 1.
    model = kernel_model()
    nodes = corridor_domain.node_coordinates().ravel()
    g = np.where(corridor_domain.inside_mask & (nodes <= 0.995), 1.0, 0.0)
    v = evaluate_congestion(model, g, corridor_domain, np.array([0.5]))
    assert v == pytest.approx(1.0, abs=1e-12)


def test_convolution_matches_independent_quadrature(corridor_domain):
    # smooth density against brute-force quadrature of the analytic kernel
    d = corridor_domain
    model = kernel_model(chi_radius=0.15)
    nodes = d.node_coordinates().ravel()
    dens = np.where(d.inside_mask, 1.0 + 0.5 * np.sin(2 * np.pi * nodes), 0.0)
    dens /= dens[d.inside_mask].sum() * d.cell_size
    x = 0.5
    fine = np.linspace(x - 0.15, x + 0.15, 20001)
    chi_raw = np.maximum(1.0 - ((fine - x) / 0.15) ** 2, 0.0) ** 2
    chi = chi_raw / np.trapezoid(chi_raw, fine)
    dens_fine = np.interp(fine, nodes, dens)
    conv = np.trapezoid(chi * dens_fine, fine)
    expected = np.clip(max(2.0 - conv, 0.2), 0.2, 2.0)
    got = evaluate_congestion(model, dens, d, np.array([x]))
    assert got == pytest.approx(expected, abs=2e-2)


def test_clamp_invariant(corridor_domain, rng):
    model = kernel_model(k_min=0.5, k_max=1.4)
    for _ in range(5):
        g = np.where(corridor_domain.inside_mask,
                     rng.random(corridor_domain.grid_shape), 0.0)
        g /= g[corridor_domain.inside_mask].sum() * corridor_domain.cell_size
        pts = rng.uniform(0.0, 1.0, size=(40, 1))
        vals = evaluate_congestion(model, g, corridor_domain, pts)
        assert np.all(vals >= 0.5 - 1e-12)
        assert np.all(vals <= 1.4 + 1e-12)


def test_monotonicity_in_density(corridor_domain, rng):
    model = kernel_model()
    base = np.where(corridor_domain.inside_mask,
                    rng.random(corridor_domain.grid_shape), 0.0)
    base *= 0.5 / (base[corridor_domain.inside_mask].sum()
                   * corridor_domain.cell_size)
    heavier = base * 1.8
    pts = rng.uniform(0.0, 1.0, size=(30, 1))
    lo = evaluate_congestion(model, heavier, corridor_domain, pts)
    hi = evaluate_congestion(model, base, corridor_domain, pts)
    assert np.all(lo <= hi + 1e-12)


def test_density_validation_errors(corridor_domain):
    model = kernel_model()
    bad = np.where(corridor_domain.inside_mask, -1.0, 0.0)
    with pytest.raises(NegativeDensityError):
        evaluate_congestion(model, bad, corridor_domain, np.array([0.5]))
    heavy = uniform_density(corridor_domain) * 3.0
    with pytest.raises(MFGError):
        evaluate_congestion(model, heavy, corridor_domain, np.array([0.5]))


def _series(domain, grids, dt=0.01):
    times = dt * np.arange(len(grids))
    return DensitySeries(times=times, grids=list(grids), bandwidth=0.02)


def test_sample_constant_model_field(corridor_domain):
    model = ConstantCongestion(k0=1.3, k_min=1.3, k_max=1.3)
    dens = uniform_density(corridor_domain)
    field = sample_speed_field(model, _series(corridor_domain, [dens] * 4),
                               corridor_domain)
    assert np.allclose(field.values, 1.3)
    assert field.lipschitz_estimate == 0.0


def test_equal_densities_give_static_field(corridor_domain):
    model = kernel_model()
    dens = uniform_density(corridor_domain)
    field = sample_speed_field(model, _series(corridor_domain, [dens] * 5),
                               corridor_domain)
    for i in range(1, 5):
        assert np.array_equal(field.values[i], field.values[0])


def test_moving_bump_slows_local_speed(corridor_domain):
    d = corridor_domain
    model = kernel_model(g_intercept=1.0, g_slope=0.5, k_min=0.3, k_max=1.0,
                         g_floor=0.0)
    nodes = d.node_coordinates().ravel()
    grids = []
    centers = [0.3, 0.5, 0.7]
    for c in centers:
        g = np.where(d.inside_mask, np.exp(-((nodes - c) / 0.06) ** 2), 0.0)
        g /= g[d.inside_mask].sum() * d.cell_size
        grids.append(g)
    field = sample_speed_field(model, _series(d, grids), d)
    assert np.all(field.values >= model.k_min - 1e-12)
    assert np.all(field.values <= model.k_max + 1e-12)
    for i, c in enumerate(centers):
        at_bump = field.at(field.times[i], np.array([[c]]))[0]
        far = field.at(field.times[i], np.array([[(c + 0.45) % 0.9 + 0.05]]))[0]
        assert at_bump < far - 0.05


def test_penalized_speed_formula(corridor_domain):
    field = constant_speed_field(corridor_domain, 1.0)
    pen = PenalizedSpeed(base=field, epsilon=0.04, epsilon0=np.inf)
    assert penalized_speed_at(pen, 0.0, np.array([0.5])) == pytest.approx(1.0)
    assert penalized_speed_at(pen, 0.0, np.array([1.04])) == pytest.approx(0.0)
    assert penalized_speed_at(pen, 0.0, np.array([1.02])) == pytest.approx(0.5)


def test_penalized_lipschitz_sanity(corridor_domain):
    field = constant_speed_field(corridor_domain, 1.0)
    eps = 0.04
    pen = PenalizedSpeed(base=field, epsilon=eps, epsilon0=np.inf)
    grid = pen.slice_values(0)
    slopes = np.abs(np.diff(grid)) / corridor_domain.cell_size
    bound = field.lipschitz_estimate + field.k_max / eps
    assert slopes.max() <= bound + 1e-6


def test_epsilon0_formula(corridor_domain):
    const = constant_speed_field(corridor_domain, 1.0)
    assert epsilon0_estimate(const, corridor_domain) == np.inf

    def field_with_L(L):
        vals = np.ones((2,) + corridor_domain.grid_shape)
        return SpeedField(times=np.array([0.0, 0.01]), values=vals,
                          stationary_from=0.01, lipschitz_estimate=L,
                          k_min=0.5, k_max=1.0, domain=corridor_domain)

    assert epsilon0_estimate(field_with_L(1.0), corridor_domain) == \
        pytest.approx(0.125)
    assert epsilon0_estimate(field_with_L(2.0), corridor_domain) == \
        pytest.approx(0.0625)


def test_epsilon_must_be_admissible(corridor_domain):
    field = constant_speed_field(corridor_domain, 1.0)
    with pytest.raises(MFGError):
        PenalizedSpeed(base=field, epsilon=0.2, epsilon0=0.1)
