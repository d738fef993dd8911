"""Crowd interaction term and the speed fields it induces.

The interaction evaluates a decreasing profile of the locally averaged
density and clamps the result to a fixed speed interval.  Speeds are
extended off the closed domain by nearest-point projection and, for the
penalized problem, cut linearly to zero at a fixed distance outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._interp import masked_interpolate
from .errors import MFGError, NegativeDensityError
from .geometry import Domain


# ---------------------------------------------------------------------------
# Interaction models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantCongestion:
    """Interaction-free model: speed is a clamped constant."""

    k0: float
    k_min: float
    k_max: float

    def speed_from_local_mass(self, s):
        return np.clip(np.full_like(np.asarray(s, dtype=float), self.k0),
                       self.k_min, self.k_max)

    @property
    def is_constant(self):
        return True


@dataclass(frozen=True)
class KernelCongestion:
    """Speed given by a clamped affine profile of a local density average.

    The averaging kernel is radial with compact support ``chi_radius`` and
    is normalized discretely on the sampling grid so that a unit uniform
    density averages to exactly one.
    """

    g_intercept: float
    g_slope: float
    k_min: float
    k_max: float
    chi_radius: float
    chi_kind: str = "quartic"  # or "triangular"
    g_floor: float = 0.0

    def __post_init__(self):
        if self.g_slope < 0.0:
            raise MFGError("g_slope must be nonnegative (profile non-increasing)")
        if not 0.0 < self.k_min <= self.k_max:
            raise MFGError("require 0 < k_min <= k_max")

    def kernel_weight(self, r):
        s = np.asarray(r, dtype=float) / self.chi_radius
        if self.chi_kind == "triangular":
            return np.maximum(1.0 - s, 0.0)
        if self.chi_kind == "quartic":
            return np.maximum(1.0 - s**2, 0.0) ** 2
        raise MFGError(f"unknown kernel kind {self.chi_kind!r}")

    def speed_from_local_mass(self, s):
        g = self.g_intercept - self.g_slope * np.asarray(s, dtype=float)
        g = np.maximum(g, self.g_floor)
        return np.clip(g, self.k_min, self.k_max)

    @property
    def is_constant(self):
        return False


def _footprint_offsets(domain: Domain, radius: float):
    """Integer node offsets covering a ball of the given radius plus one cell."""
    h = domain.cell_size
    m = int(np.ceil(radius / h)) + 1
    if domain.dim == 1:
        offs = np.arange(-m, m + 1)[:, None]
    else:
        g = np.arange(-m, m + 1)
        ox, oy = np.meshgrid(g, g, indexing="ij")
        offs = np.stack([ox.ravel(), oy.ravel()], axis=1)
    keep = np.linalg.norm(offs * h, axis=1) <= radius + h
    return offs[keep]


def evaluate_congestion(model, density, domain: Domain, x):
    """Speed induced at point(s) ``x`` by a density grid.

    ``density`` integrates to at most one over the domain (grid values are
    per unit volume).  Returns the clamped profile of the kernel average;
    for the constant model the density is ignored.
    """
    density = np.asarray(density, dtype=float)
    if np.any(density < -1e-12):
        raise NegativeDensityError("density grid has negative entries")
    total = density[domain.inside_mask].sum() * domain.cell_size**domain.dim
    if total > 1.0 + 1e-6:
        raise MFGError(f"density integrates to {total:.6g} > 1")

    single = np.ndim(x) == 1
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if model.is_constant:
        out = model.speed_from_local_mass(np.zeros(len(pts)))
        return float(out[0]) if single else out

    h = domain.cell_size
    offs = _footprint_offsets(domain, model.chi_radius)
    base = np.rint((pts - domain.origin) / h).astype(np.intp)  # (P, dim)
    idx = base[:, None, :] + offs[None, :, :]  # (P, F, dim)
    centers = domain.origin + h * idx
    dist = np.linalg.norm(centers - pts[:, None, :], axis=2)
    w = model.kernel_weight(dist)  # (P, F)
    vol = h**domain.dim
    norm = w.sum(axis=1) * vol

    valid = np.ones(idx.shape[:2], dtype=bool)
    for a, n in enumerate(domain.grid_shape):
        valid &= (idx[..., a] >= 0) & (idx[..., a] < n)
    clipped = idx.copy()
    for a, n in enumerate(domain.grid_shape):
        np.clip(clipped[..., a], 0, n - 1, out=clipped[..., a])
    dens = density[tuple(np.moveaxis(clipped, -1, 0))] * valid
    local = (w * dens).sum(axis=1) * vol / np.maximum(norm, 1e-300)
    out = model.speed_from_local_mass(local)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Speed fields
# ---------------------------------------------------------------------------


@dataclass
class SpeedField:
    """Space-time sampled speeds on the full grid; stationary past a horizon."""

    times: np.ndarray  # (nt,), uniform from 0
    values: np.ndarray  # (nt, *grid_shape)
    stationary_from: float
    lipschitz_estimate: float
    k_min: float
    k_max: float
    domain: Domain = field(repr=False, default=None)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else np.inf

    def slice_index(self, t):
        if t >= self.stationary_from or len(self.times) == 1:
            return len(self.times) - 1
        i = int(np.floor((t - self.times[0]) / self.dt + 1e-9))
        return min(max(i, 0), len(self.times) - 1)

    def at(self, t, pts):
        """Speed at time ``t`` and point(s); linear in time, bilinear in space."""
        single = np.ndim(pts) == 1
        p = np.atleast_2d(pts)
        i = self.slice_index(t)
        lo = masked_interpolate(self.values[i], None, p,
                                self.domain.origin, self.domain.cell_size)
        if t <= self.times[i] + 1e-12 or i + 1 >= len(self.times):
            out = lo
        else:
            hi = masked_interpolate(self.values[i + 1], None, p,
                                    self.domain.origin, self.domain.cell_size)
            a = (t - self.times[i]) / self.dt
            out = (1.0 - a) * lo + a * hi
        return float(out[0]) if single else out

    def gradient_at(self, t, pts, delta=None):
        """Central-difference spatial gradient of the speed.

        The default step samples the stored interpolant locally (well
        below one cell), so the gradient matches the field seen by
        trajectories rather than a doubly smoothed one.
        """
        p = np.atleast_2d(pts)
        if delta is None:
            delta = self.domain.cell_size / 64.0
        g = np.zeros_like(p)
        for a in range(self.domain.dim):
            e = np.zeros(self.domain.dim)
            e[a] = delta
            gp = self.domain.clip_to_grid(p + e)
            gm = self.domain.clip_to_grid(p - e)
            g[:, a] = (self.at(t, gp) - self.at(t, gm)) / (gp[:, a] - gm[:, a])
        return g

    def time_slope_at(self, t, pts):
        """Central-difference time derivative of the speed."""
        dt = self.dt
        if not np.isfinite(dt):
            return np.zeros(len(np.atleast_2d(pts)))
        lo, hi = max(t - dt, self.times[0]), min(t + dt, self.stationary_from)
        if hi <= lo + 1e-12:
            return np.zeros(len(np.atleast_2d(pts)))
        return (self.at(hi, pts) - self.at(lo, pts)) / (hi - lo)


def sample_speed_field(model, densities, domain: Domain) -> SpeedField:
    """Evaluate the interaction on every density slice at every grid node.

    Band nodes outside the closed domain take the speed of their nearest
    projection, keeping the field Lipschitz across the boundary.  Identical
    consecutive density slices are evaluated once.
    """
    times = np.asarray(densities.times, dtype=float)
    nodes = domain.node_coordinates()
    inside_flat = domain.inside_mask.ravel()
    pts = nodes.copy()
    pts[~inside_flat] = domain.project_points(nodes[~inside_flat])

    slices = np.empty((len(times),) + domain.grid_shape)
    cache_grid = None
    cache_vals = None
    for i, grid in enumerate(densities.grids):
        if cache_grid is not None and (
            grid is cache_grid or np.array_equal(grid, cache_grid)
        ):
            slices[i] = cache_vals
            continue
        vals = evaluate_congestion(model, grid, domain, pts).reshape(domain.grid_shape)
        slices[i] = vals
        cache_grid = grid
        cache_vals = vals

    lip = 0.0
    h = domain.cell_size
    if len(times) > 1:
        dt = times[1] - times[0]
        lip = float(np.max(np.abs(np.diff(slices, axis=0)))) / dt
    for a in range(domain.dim):
        d = np.abs(np.diff(slices, axis=1 + a)) / h
        if d.size:
            lip = max(lip, float(np.max(d)))

    return SpeedField(
        times=times,
        values=slices,
        stationary_from=float(times[-1]),
        lipschitz_estimate=lip,
        k_min=model.k_min if not model.is_constant else float(np.min(slices)),
        k_max=model.k_max if not model.is_constant else float(np.max(slices)),
        domain=domain,
    )


def constant_speed_field(domain: Domain, speed: float, k_min=None, k_max=None) -> SpeedField:
    """Time-independent uniform speed field (single stationary slice)."""
    grid = np.full(domain.grid_shape, float(speed))
    return SpeedField(
        times=np.array([0.0]),
        values=grid[None, ...],
        stationary_from=0.0,
        lipschitz_estimate=0.0,
        k_min=float(speed) if k_min is None else k_min,
        k_max=float(speed) if k_max is None else k_max,
        domain=domain,
    )


@dataclass
class PenalizedSpeed:
    """Speed cut linearly to zero at distance ``epsilon`` outside the domain."""

    base: SpeedField
    epsilon: float
    epsilon0: float
    domain: Domain = field(repr=False, default=None)

    def __post_init__(self):
        if self.domain is None:
            self.domain = self.base.domain
        if not self.epsilon < self.epsilon0:
            raise MFGError(
                f"epsilon {self.epsilon} must be below the admissible "
                f"threshold {self.epsilon0}"
            )

    def ramp(self, pts):
        d = np.maximum(self.domain.sdf(np.atleast_2d(pts)), 0.0)
        return np.maximum(1.0 - d / self.epsilon, 0.0)

    def at(self, t, pts):
        single = np.ndim(pts) == 1
        p = np.atleast_2d(pts)
        out = self.base.at(t, p) * self.ramp(p)
        return float(out[0]) if single else out

    def gradient_at(self, t, pts, delta=None):
        """Gradient split into base and penalty branches (exact ramp term)."""
        p = np.atleast_2d(pts)
        r = self.ramp(p)
        g = self.base.gradient_at(t, p, delta=delta) * r[:, None]
        d = self.domain.sdf(p)
        active = (d > 1e-12) & (r > 0.0)
        if np.any(active):
            k = self.base.at(t, p[active])
            g[active] -= (k / self.epsilon)[:, None] * self.domain.sdf_gradient(
                p[active]
            )
        return g

    def time_slope_at(self, t, pts):
        return self.base.time_slope_at(t, pts) * self.ramp(np.atleast_2d(pts))

    def slice_values(self, i):
        """Penalized speeds on the full grid for time-slice ``i``."""
        nodes = self.domain.node_coordinates()
        ramp = self.ramp(nodes).reshape(self.domain.grid_shape)
        return self.base.values[i] * ramp


def penalized_speed_at(pen: PenalizedSpeed, t: float, x) -> float:
    """Penalized speed at a single space-time point."""
    return pen.at(t, np.asarray(x, dtype=float))


def epsilon0_estimate(field: SpeedField, domain: Domain) -> float:
    """Admissible penalization threshold from the measured speed regularity.

    Solves the strict inequality guaranteeing that penalized optima stay
    near the domain, halved as a safety factor.  A field with no measured
    variation returns infinity.
    """
    lip = field.lipschitz_estimate
    if not np.isfinite(lip):
        raise MFGError("lipschitz_estimate must be finite")
    if lip <= 1e-14:
        return np.inf
    return 0.5 * field.k_min / (lip * (1.0 + field.k_max))


def export_speed_field_csv(field: SpeedField, path) -> None:
    """Write rows (t, i, j, k) for every stored slice and node."""
    dom = field.domain
    idx = np.argwhere(np.ones(dom.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,i,j,k\n")
        for n, t in enumerate(field.times):
            vals = field.values[n].ravel()
            for k in range(len(vals)):
                i = idx[k][0]
                j = idx[k][1] if dom.dim == 2 else 0
                f.write(f"{t:.17g},{i},{j},{vals[k]:.17g}\n")
