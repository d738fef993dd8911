"""Particle populations, their densities, and transport distances.

The crowd is carried in Lagrangian form: weighted paths whose time
slices are turned into grid densities by a compact radial kernel.  The
1-Wasserstein distance between grid densities is exact: a cumulative sum
in one dimension, an integerized minimum-cost flow on the grid graph in
two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import EmptySupportError, MassMismatchError, MFGError
from .geometry import Domain
from .trajectories import Trajectory

# Integer scales sized so total costs stay well inside int64.
_COST_SCALE = 1 << 14
_MASS_SCALE = 10**9


# ---------------------------------------------------------------------------
# Initial measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformM0:
    """Uniform distribution on a box or disk intersected with the domain."""

    region: object  # a geometry shape with signed_distance + bounding_box

    def draw(self, domain, n, rng):
        lo, hi = self.region.bounding_box()
        glo = domain.origin
        ghi = domain.origin + domain.cell_size * (np.asarray(domain.grid_shape) - 1)
        lo = np.maximum(lo, glo)
        hi = np.minimum(hi, ghi)
        if np.any(hi <= lo):
            raise EmptySupportError("initial region misses the domain grid")
        out = []
        for _ in range(200):
            cand = rng.uniform(lo, hi, size=(4 * n, domain.dim))
            ok = (self.region.signed_distance(cand) <= 1e-12) & domain.contains(cand)
            out.append(cand[ok])
            if sum(len(c) for c in out) >= n:
                break
        pts = np.concatenate(out) if out else np.empty((0, domain.dim))
        if len(pts) < n:
            raise EmptySupportError("initial region has no mass inside the domain")
        return pts[:n]


@dataclass(frozen=True)
class GaussianM0:
    """Isotropic normal distribution truncated to the domain."""

    center: tuple
    sigma: float

    def draw(self, domain, n, rng):
        c = np.asarray(self.center, dtype=float)
        out = []
        for _ in range(200):
            cand = rng.normal(c, self.sigma, size=(4 * n, domain.dim))
            ok = domain.contains(cand)
            out.append(cand[ok])
            if sum(len(x) for x in out) >= n:
                break
        pts = np.concatenate(out) if out else np.empty((0, domain.dim))
        if len(pts) < n:
            raise EmptySupportError("truncated normal has no mass inside the domain")
        return pts[:n]


@dataclass(frozen=True)
class PointMassesM0:
    """Finitely many fixed locations with given masses."""

    points: tuple  # ((x, ...), ...)
    masses: tuple

    def positions_weights(self, domain):
        pts = np.asarray(self.points, dtype=float).reshape(len(self.points), -1)
        w = np.asarray(self.masses, dtype=float)
        if np.any(w < 0.0):
            raise MFGError("point masses must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise MFGError(f"point masses sum to {w.sum():.12g}, expected 1")
        if not np.all(domain.contains(pts)):
            raise EmptySupportError("a point mass lies outside the domain")
        return pts, w / w.sum()


# ---------------------------------------------------------------------------
# Ensembles and densities
# ---------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """Weighted agent paths sharing one step size and time origin."""

    count: int
    weights: np.ndarray
    trajectories: list
    seed: int
    _padded: np.ndarray = field(repr=False, default=None)
    _pad_dt: float = field(repr=False, default=np.nan)

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise MFGError("particle weights must sum to one")
        if np.any(self.weights < 0.0):
            raise MFGError("particle weights must be nonnegative")

    def positions_at(self, t):
        """All particle positions at time ``t`` (constant past arrival)."""
        if self._padded is None:
            lens = [len(tr.points) for tr in self.trajectories]
            L = max(lens)
            dim = self.trajectories[0].dim
            pad = np.empty((self.count, L, dim))
            for i, tr in enumerate(self.trajectories):
                pad[i, : len(tr.points)] = tr.points
                pad[i, len(tr.points) :] = tr.points[-1]
            self._padded = pad
            self._pad_dt = self.trajectories[0].dt
        i = int(np.floor(t / self._pad_dt + 1e-9)) if np.isfinite(self._pad_dt) else 0
        i = min(max(i, 0), self._padded.shape[1] - 1)
        return self._padded[:, i, :]

    def all_stopped(self):
        return all(tr.stopped for tr in self.trajectories)

    def max_end_time(self):
        return max(tr.t0 + tr.exit_time for tr in self.trajectories)


@dataclass
class DensitySeries:
    """Time-indexed nonnegative grids each integrating to one."""

    times: np.ndarray
    grids: list
    bandwidth: float

    def validate(self, domain: Domain):
        vol = domain.cell_size**domain.dim
        for g in self.grids:
            if np.any(g < -1e-12):
                raise MFGError("density grid has negative entries")
            if abs(g.sum() * vol - 1.0) > 1e-9:
                raise MassMismatchError(
                    f"density mass {g.sum() * vol:.12g} differs from 1"
                )
        return self


def sample_initial_particles(m0_spec, domain: Domain, n: int, seed: int
                             ) -> ParticleEnsemble:
    """Realize the initial crowd as seeded particles with constant paths."""
    rng = np.random.default_rng(seed)
    if isinstance(m0_spec, PointMassesM0):
        pts, w = m0_spec.positions_weights(domain)
        n = len(pts)
    else:
        if n < 1:
            raise MFGError("need at least one particle")
        pts = m0_spec.draw(domain, n, rng)
        w = np.full(n, 1.0 / n)

    on_target = domain.in_target_cell(pts)
    trajs = []
    for i in range(n):
        trajs.append(
            Trajectory(
                t0=0.0,
                dt=1.0,
                points=pts[i][None, :].copy(),
                controls=np.zeros((1, domain.dim)),
                exit_time=0.0 if on_target[i] else np.inf,
                stopped=bool(on_target[i]),
            )
        )
    return ParticleEnsemble(count=n, weights=w, trajectories=trajs, seed=seed)


def _deposit_kernel(r, bandwidth):
    s = np.asarray(r, dtype=float) / bandwidth
    return np.maximum(1.0 - s**2, 0.0) ** 2


def deposit_positions(positions, weights, domain: Domain, bandwidth: float):
    """Kernel deposition of weighted positions onto the inside cells.

    Each particle's kernel footprint is renormalized over the inside
    cells it covers, so no mass is lost at walls.
    """
    if bandwidth < domain.cell_size - 1e-12:
        raise MFGError("bandwidth must be at least one cell")
    h = domain.cell_size
    pts = np.atleast_2d(positions)
    m = int(np.ceil(bandwidth / h)) + 1
    if domain.dim == 1:
        offs = np.arange(-m, m + 1)[:, None]
    else:
        g = np.arange(-m, m + 1)
        ox, oy = np.meshgrid(g, g, indexing="ij")
        offs = np.stack([ox.ravel(), oy.ravel()], axis=1)
    keep = np.linalg.norm(offs * h, axis=1) <= bandwidth + h
    offs = offs[keep]

    base = np.rint((pts - domain.origin) / h).astype(np.intp)
    idx = base[:, None, :] + offs[None, :, :]
    centers = domain.origin + h * idx
    dist = np.linalg.norm(centers - pts[:, None, :], axis=2)
    w = _deposit_kernel(dist, bandwidth)

    valid = np.ones(idx.shape[:2], dtype=bool)
    for a, nmax in enumerate(domain.grid_shape):
        valid &= (idx[..., a] >= 0) & (idx[..., a] < nmax)
    clipped = idx.copy()
    for a, nmax in enumerate(domain.grid_shape):
        np.clip(clipped[..., a], 0, nmax - 1, out=clipped[..., a])
    flat = np.ravel_multi_index(tuple(np.moveaxis(clipped, -1, 0)),
                                domain.grid_shape)
    valid &= domain.inside_mask.ravel()[flat]
    w = w * valid

    vol = h**domain.dim
    z = w.sum(axis=1) * vol
    fallback = z <= 1e-300
    if np.any(fallback):
        near = domain.nearest_inside_compact(pts[fallback])
        near_flat = domain._inside_flat[near]
        w[fallback] = 0.0
        for row, nf in zip(np.flatnonzero(fallback), near_flat):
            sel = flat[row] == nf
            if not sel.any():
                flat[row, 0] = nf
                sel = np.zeros(offs.shape[0], dtype=bool)
                sel[0] = True
            w[row, sel] = 1.0
        z[fallback] = w[fallback].sum(axis=1) * vol

    contrib = (np.asarray(weights)[:, None] * w) / z[:, None]
    grid = np.zeros(int(np.prod(domain.grid_shape)))
    np.add.at(grid, flat.ravel(), contrib.ravel())
    return grid.reshape(domain.grid_shape)


def density_from_particles(ens: ParticleEnsemble, t: float, domain: Domain,
                           bandwidth: float):
    """Grid density of the crowd at time ``t`` (unit total mass)."""
    return deposit_positions(ens.positions_at(t), ens.weights, domain, bandwidth)


def pushforward_series(ens: ParticleEnsemble, domain: Domain, times,
                       bandwidth: float) -> DensitySeries:
    """Density at every requested time; frozen once every particle stopped."""
    times = np.asarray(times, dtype=float)
    if all(len(tr.points) == 1 for tr in ens.trajectories):
        g = density_from_particles(ens, 0.0, domain, bandwidth)
        return DensitySeries(times=times, grids=[g] * len(times),
                             bandwidth=bandwidth).validate(domain)
    grids = []
    freeze_after = ens.max_end_time() if ens.all_stopped() else np.inf
    frozen = None
    for t in times:
        if frozen is not None and t >= freeze_after:
            grids.append(frozen)
            continue
        g = density_from_particles(ens, t, domain, bandwidth)
        if t >= freeze_after:
            frozen = g
        grids.append(g)
    return DensitySeries(times=times, grids=grids, bandwidth=bandwidth
                         ).validate(domain)


# ---------------------------------------------------------------------------
# Wasserstein-1 distance
# ---------------------------------------------------------------------------


def _masses(grid, domain):
    return np.asarray(grid, dtype=float).ravel()[domain._inside_flat] * (
        domain.cell_size**domain.dim
    )


def _quantize(mass):
    q = np.rint(mass * _MASS_SCALE).astype(np.int64)
    drift = _MASS_SCALE * np.int64(round(mass.sum())) - q.sum()
    q[np.argmax(q)] += drift
    return q


def wasserstein1(mu, nu, domain: Domain) -> float:
    """Exact optimal-transport cost between two equal-mass grid densities.

    One dimension uses the cumulative-distribution formula; two dimensions
    solve an integerized minimum-cost flow on the 8-connected grid graph
    (network simplex), so metric axioms hold to quantization error.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(mu < -1e-12) or np.any(nu < -1e-12):
        raise MFGError("densities must be nonnegative")
    a = _masses(mu, domain)
    b = _masses(nu, domain)
    if abs(a.sum() - b.sum()) > 1e-9:
        raise MassMismatchError(
            f"masses differ: {a.sum():.12g} vs {b.sum():.12g}"
        )
    if np.array_equal(mu, nu):
        return 0.0

    if domain.dim == 1:
        full_mu = mu.ravel() * domain.cell_size
        full_nu = nu.ravel() * domain.cell_size
        cdf_gap = np.cumsum(full_mu - full_nu)
        return float(np.sum(np.abs(cdf_gap)) * domain.cell_size)

    qa = _quantize(a)
    qb = _quantize(b)
    demand = qb - qa  # positive: node must receive flow

    g = nx.DiGraph()
    for i, dem in enumerate(demand):
        g.add_node(i, demand=int(dem))
    rows, cols, lengths = domain._edges
    cost_int = np.rint(lengths / domain.cell_size * _COST_SCALE).astype(np.int64)
    # explicit finite capacities keep the solver's artificial-arc detection
    # well away from genuine flows
    cap = int(max(qa.sum(), 1))
    for u, v, c in zip(rows, cols, cost_int):
        g.add_edge(int(u), int(v), weight=int(c), capacity=cap)
        g.add_edge(int(v), int(u), weight=int(c), capacity=cap)
    try:
        total, _ = nx.network_simplex(g)
    except nx.NetworkXUnfeasible as exc:  # pragma: no cover - guarded above
        raise MassMismatchError("transport infeasible") from exc
    return float(total) * domain.cell_size / (_COST_SCALE * _MASS_SCALE)


def sup_wasserstein1(series_a: DensitySeries, series_b: DensitySeries,
                     domain: Domain) -> float:
    """Largest slice-wise W1 between two density series on one time grid."""
    if len(series_a.times) != len(series_b.times):
        raise MFGError("series must share their time grid")
    best = 0.0
    for ga, gb in zip(series_a.grids, series_b.grids):
        best = max(best, wasserstein1(ga, gb, domain))
    return best


def export_density_csv(series: DensitySeries, domain: Domain, path,
                       stride: int = 1) -> None:
    """Write rows (t, i, j, density) for every stride-th slice."""
    idx = np.argwhere(np.ones(domain.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,i,j,density\n")
        for n in range(0, len(series.times), stride):
            vals = series.grids[n].ravel()
            for k in range(len(vals)):
                if vals[k] == 0.0:
                    continue
                i = idx[k][0]
                j = idx[k][1] if domain.dim == 2 else 0
                f.write(f"{series.times[n]:.17g},{i},{j},{vals[k]:.17g}\n")
