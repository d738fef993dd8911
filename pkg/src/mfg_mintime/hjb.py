"""Minimal-time value functions on grids.

Three routes to the same quantity keep each other honest:

* a fast-marching solver for the stationary problem (Godunov upwind),
* an exact shortest-path oracle on the 8-connected grid graph,
* a backward semi-Lagrangian sweep for the time-dependent problem, whose
  stationary tail is the fixed point of its own one-step update.

The module also estimates descent-direction sets from difference
quotients and exposes the normalized gradient used by the feedback law.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from ._interp import masked_interpolate
from .congestion import SpeedField
from .errors import (
    AmbiguousGradientError,
    CFLViolationError,
    MFGError,
    UnreachableTargetError,
)
from .geometry import Domain

DESCENT_TOL = 0.05  # quotient band accepted around the best descent rate
ANGLE_TOL = np.deg2rad(15.0)  # max spread of a singleton direction cluster
EMPTY_GAP = 0.5  # rate gap beyond which no direction counts as descending


def direction_set(dim: int, n_dirs: int) -> np.ndarray:
    """Unit directions: evenly spaced plus the grid diagonals (2D)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if n_dirs < 16:
        raise MFGError("need at least 16 directions in 2D")
    ang = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    ang = np.concatenate([ang, np.deg2rad(45.0 * np.arange(8))])
    ang = np.unique(np.round(ang, 12) % (2.0 * np.pi))
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


# ---------------------------------------------------------------------------
# Stationary solvers
# ---------------------------------------------------------------------------


def _fast_march(mask, speed, seeds, h):
    """Godunov upwind fast marching restricted to ``mask`` cells.

    Cells with nonpositive speed stay at infinity.  Returns a full grid
    with NaN outside the mask.
    """
    shape = mask.shape
    dim = mask.ndim
    values = np.full(shape, np.inf)
    movable = mask & (speed > 1e-14)
    known = np.zeros(shape, dtype=bool)

    heap = []
    seed_idx = np.argwhere(seeds & mask)
    for ij in seed_idx:
        t = tuple(ij)
        values[t] = 0.0
        heapq.heappush(heap, (0.0, t))

    def axis_min(t, a):
        lo = list(t)
        best = np.inf
        for s in (-1, 1):
            lo[a] = t[a] + s
            if 0 <= lo[a] < shape[a]:
                tt = tuple(lo)
                if known[tt]:
                    best = min(best, values[tt])
        return best

    def update_value(t):
        cost = h / speed[t]
        mins = sorted(axis_min(t, a) for a in range(dim))
        a = mins[0]
        if not np.isfinite(a):
            return np.inf
        if dim == 1 or not np.isfinite(mins[1]) or abs(a - mins[1]) >= cost:
            return a + cost
        b = mins[1]
        return 0.5 * (a + b + np.sqrt(2.0 * cost**2 - (a - b) ** 2))

    while heap:
        v, t = heapq.heappop(heap)
        if known[t] or v > values[t]:
            continue
        known[t] = True
        for a in range(dim):
            for s in (-1, 1):
                nb = list(t)
                nb[a] = t[a] + s
                if not 0 <= nb[a] < shape[a]:
                    continue
                tt = tuple(nb)
                if known[tt] or not movable[tt]:
                    continue
                cand = update_value(tt)
                if cand < values[tt]:
                    values[tt] = cand
                    heapq.heappush(heap, (cand, tt))

    out = np.where(mask, values, np.nan)
    return out


def solve_stationary_value(domain: Domain, speed_slice) -> np.ndarray:
    """Stationary minimal travel time to the target on the inside cells.

    Raises :class:`UnreachableTargetError` if some inside cell has
    infinite value.
    """
    speed = np.asarray(speed_slice, dtype=float)
    vals = _fast_march(domain.inside_mask, speed, domain.target_mask,
                       domain.cell_size)
    if np.any(np.isinf(vals[domain.inside_mask])):
        raise UnreachableTargetError("target unreachable from some inside cell")
    return vals


def dijkstra_oracle(domain: Domain, speed_slice) -> np.ndarray:
    """Exact travel time on the 8-connected grid graph.

    Edge cost is edge length divided by the harmonic mean of the endpoint
    speeds; sources are the target cells.
    """
    speed = np.asarray(speed_slice, dtype=float)
    rows, cols, lengths = domain._edges
    k = speed.ravel()[domain._inside_flat]
    if np.any(k <= 0.0):
        raise MFGError("oracle requires positive speeds on inside cells")
    cost = lengths * 0.5 * (1.0 / k[rows] + 1.0 / k[cols])
    n = len(domain._inside_flat)
    graph = csr_matrix(
        (np.concatenate([cost, cost]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    targets = domain._compact_of_flat[
        np.flatnonzero(domain.target_mask.ravel())
    ]
    dist = _csgraph_dijkstra(graph, indices=targets, min_only=True)
    if np.any(np.isinf(dist)):
        raise UnreachableTargetError("target unreachable from some inside cell")
    out = np.full(domain.grid_shape, np.nan).ravel()
    out[domain._inside_flat] = dist
    return out.reshape(domain.grid_shape)


# ---------------------------------------------------------------------------
# Time-dependent value function
# ---------------------------------------------------------------------------


@dataclass
class ValueFunction:
    """Space-time minimal exit times; stationary past the field horizon."""

    times: np.ndarray
    values: np.ndarray  # (nt, *grid_shape), NaN off the computed region
    horizon_bound: float
    domain: Domain = field(repr=False, default=None)
    stationary_from: float = 0.0

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else np.inf

    def slice_index(self, t):
        if t >= self.stationary_from or len(self.times) == 1:
            return len(self.times) - 1
        i = int(np.floor((t - self.times[0]) / self.dt + 1e-9))
        return min(max(i, 0), len(self.times) - 1)

    def interp(self, t, pts):
        """Masked space-time interpolation; NaN where no data is nearby."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        i = self.slice_index(t)
        lo = masked_interpolate(self.values[i], None, p,
                                self.domain.origin, self.domain.cell_size)
        if t <= self.times[i] + 1e-12 or i + 1 >= len(self.times):
            return lo
        hi = masked_interpolate(self.values[i + 1], None, p,
                                self.domain.origin, self.domain.cell_size)
        a = (t - self.times[i]) / self.dt
        return (1.0 - a) * lo + a * hi

    def at(self, t, x):
        """Value at one point; raises off the computed region."""
        v = self.interp(t, np.asarray(x, dtype=float)[None, :])[0]
        if not np.isfinite(v):
            raise MFGError(f"value query at {x} is off the computed region")
        return float(v)


def _sl_step(domain, next_vals, speed_grid, dt, dirs, valid, target, constrained):
    """One backward semi-Lagrangian update of a value slice."""
    cells = np.flatnonzero(valid.ravel())
    pts = domain.node_coordinates()[cells]
    k = speed_grid.ravel()[cells]
    n, nd = len(pts), len(dirs)

    disp = pts[:, None, :] + dt * k[:, None, None] * dirs[None, :, :]
    flat = disp.reshape(n * nd, -1)
    if constrained:
        flat = domain.project_points(flat)
    flat = domain.clip_to_grid(flat)
    phi = masked_interpolate(next_vals, valid, flat, domain.origin,
                             domain.cell_size).reshape(n, nd)
    phi = np.where(np.isnan(phi), np.inf, phi)
    stay = masked_interpolate(next_vals, valid, pts, domain.origin,
                              domain.cell_size)
    stay = np.where(np.isnan(stay), np.inf, stay)
    best = np.minimum(phi.min(axis=1), stay) + dt

    out = np.full(domain.grid_shape, np.nan).ravel()
    out[cells] = best
    out = out.reshape(domain.grid_shape)
    out[target & valid] = 0.0
    return out


def solve_value_function(
    domain: Domain,
    speeds: SpeedField,
    n_dirs: int = 16,
    constrained: bool = True,
    tail_tol: float = 1e-12,
) -> ValueFunction:
    """Backward semi-Lagrangian solve of the exit-time problem.

    The last stored slice is the fixed point of the one-step update for
    the stationary speeds (seeded by fast marching), so time-independent
    fields reproduce it on every slice exactly.  With
    ``constrained=False`` the sweep runs on the whole band grid without
    projecting displaced points (penalized problem).

    Raises :class:`CFLViolationError` when the time step can move mass
    further than half a cell.
    """
    h = domain.cell_size
    dt = speeds.dt
    k_hi = float(np.nanmax(speeds.values))
    if np.isfinite(dt) and dt > 0.5 * h / max(k_hi, 1e-300) + 1e-12:
        raise CFLViolationError(
            f"dt={dt:.6g} exceeds CFL limit {0.5 * h / k_hi:.6g} "
            f"(cell {h:.6g}, max speed {k_hi:.6g})"
        )

    if constrained:
        valid = domain.inside_mask
    else:
        valid = np.ones(domain.grid_shape, dtype=bool)
    target = domain.target_mask
    dirs = direction_set(domain.dim, n_dirs)

    tail_speed = speeds.values[-1]
    tail = _fast_march(valid, tail_speed, target, h)
    if constrained and np.any(np.isinf(tail[valid])):
        raise UnreachableTargetError("target unreachable from some inside cell")

    sweep_dt = dt if np.isfinite(dt) else 0.4 * h / max(k_hi, 1e-300)
    max_sweeps = 4 * len(speeds.times) + 200
    for _ in range(max_sweeps):
        new = _sl_step(domain, tail, tail_speed, sweep_dt, dirs, valid,
                       target, constrained)
        finite = np.isfinite(tail) & np.isfinite(new)
        delta = np.max(np.abs(new[finite] - tail[finite])) if finite.any() else 0.0
        tail = new
        if delta <= tail_tol:
            break

    nt = len(speeds.times)
    values = np.empty((nt,) + domain.grid_shape)
    values[-1] = tail
    for i in range(nt - 2, -1, -1):
        values[i] = _sl_step(domain, values[i + 1], speeds.values[i], dt,
                             dirs, valid, target, constrained)

    diam = _inside_diameter(domain)
    bound = domain.geodesic_constant * diam / max(speeds.k_min, 1e-300)
    return ValueFunction(
        times=np.asarray(speeds.times, dtype=float),
        values=values,
        horizon_bound=float(bound),
        domain=domain,
        stationary_from=float(speeds.stationary_from),
    )


def _inside_diameter(domain: Domain) -> float:
    nodes = domain.node_coordinates()[domain._inside_flat]
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    return float(np.linalg.norm(hi - lo))


# ---------------------------------------------------------------------------
# Descent directions and the normalized gradient
# ---------------------------------------------------------------------------


@dataclass
class DescentSet:
    """Directions achieving (near-)maximal descent of the value function."""

    directions: np.ndarray  # (m, dim); empty when nothing descends
    rate_gap: float  # deviation of the best difference quotient from -1


def descent_quotients(vf, speeds, t, pts, h_quot, dirs, constrained=True):
    """Difference quotients of the value along each direction, batched."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n, nd = len(pts), len(dirs)
    k = speeds.at(t, pts)
    disp = pts[:, None, :] + h_quot * np.asarray(k)[:, None, None] * dirs[None, :, :]
    flat = disp.reshape(n * nd, -1)
    if constrained:
        flat = vf.domain.project_points(flat)
    flat = vf.domain.clip_to_grid(flat)
    phi_h = vf.interp(t + h_quot, flat).reshape(n, nd)
    phi_0 = vf.interp(t, pts)
    return (phi_h - phi_0[:, None]) / h_quot


def batch_descent_directions(
    vf,
    speeds,
    t,
    pts,
    h_quot,
    dirs,
    prev=None,
    constrained=True,
    descent_tol=DESCENT_TOL,
    angle_tol=ANGLE_TOL,
):
    """Per-point travel direction from the maximal-descent cluster.

    Returns ``(direction, singleton, rate_gap)`` arrays.  Where the
    cluster is tight the direction is its normalized mean; otherwise the
    cluster member closest in angle to ``prev`` (or the best quotient when
    no previous control exists).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    q = descent_quotients(vf, speeds, t, pts, h_quot, dirs, constrained)
    q = np.where(np.isnan(q), np.inf, q)
    qmin = q.min(axis=1)
    members = q <= (qmin + descent_tol)[:, None]
    rate_gap = np.abs(qmin + 1.0)

    msum = members.astype(float) @ dirs
    norm = np.linalg.norm(msum, axis=1, keepdims=True)
    mean = np.divide(msum, norm, out=np.zeros_like(msum), where=norm > 1e-12)
    # angular spread of the cluster around its mean
    cos_to_mean = np.einsum("md,pd->pm", dirs, mean)
    cos_min = np.where(members, cos_to_mean, 1.0).min(axis=1)
    singleton = (norm.ravel() > 1e-12) & (cos_min >= np.cos(angle_tol))

    if prev is None:
        prev = np.zeros_like(pts)
    prev_norm = np.linalg.norm(prev, axis=1)
    align = np.einsum("md,pd->pm", dirs, prev)
    score = np.where(members, align, -np.inf)
    has_prev = prev_norm > 1e-12
    fallback_idx = np.where(has_prev, score.argmax(axis=1), q.argmin(axis=1))
    fallback = dirs[fallback_idx]

    out = np.where(singleton[:, None], mean, fallback)
    return out, singleton, rate_gap


def maximal_descent_set(
    vf, speeds, t, x, h_quot=None, n_dirs=16, constrained=True,
    descent_tol=DESCENT_TOL,
) -> DescentSet:
    """Directions whose difference quotient is near the best one.

    Returns an empty set when even the best quotient is far from the
    maximal descent rate (flags points where no direction makes progress).
    """
    dt = vf.dt
    if h_quot is None:
        h_quot = 2.0 * dt if np.isfinite(dt) else 2.0 * vf.domain.cell_size
    dirs = direction_set(vf.domain.dim, n_dirs)
    q = descent_quotients(vf, speeds, t, np.asarray(x, dtype=float)[None, :],
                          h_quot, dirs, constrained)[0]
    q = np.where(np.isnan(q), np.inf, q)
    qmin = float(q.min())
    gap = abs(qmin + 1.0)
    if gap > EMPTY_GAP:
        return DescentSet(directions=np.empty((0, vf.domain.dim)), rate_gap=gap)
    members = dirs[q <= qmin + descent_tol]
    return DescentSet(directions=members, rate_gap=gap)


def normalized_gradient(
    vf, speeds, t, x, h_quot=None, n_dirs=16, constrained=True,
    angle_tol=ANGLE_TOL,
) -> np.ndarray:
    """Unit gradient direction where the descent set is a tight cluster.

    The returned vector points uphill; the travel direction is its
    negative.  Raises :class:`AmbiguousGradientError` elsewhere.
    """
    ds = maximal_descent_set(vf, speeds, t, x, h_quot, n_dirs, constrained)
    if len(ds.directions) == 0:
        raise AmbiguousGradientError("no direction achieves near-maximal descent")
    mean = ds.directions.sum(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 1e-12:
        raise AmbiguousGradientError("descent directions cancel out")
    mean = mean / norm
    if np.min(ds.directions @ mean) < np.cos(angle_tol):
        raise AmbiguousGradientError(
            f"descent cluster spread exceeds {np.rad2deg(angle_tol):.0f} degrees"
        )
    return -mean


# ---------------------------------------------------------------------------
# Residual diagnostics
# ---------------------------------------------------------------------------


def hj_residual(vf: ValueFunction, speeds: SpeedField, t: float, x) -> float:
    """Central-difference residual of the evolution equation at one point.

    Returns NaN where one-sided gradient stencils disagree (non-smooth
    point).  Preconditions: interior point two cells off the boundary,
    away from the target, and a time with neighbors on both sides.
    """
    x = np.asarray(x, dtype=float)
    dom = vf.domain
    h = dom.cell_size
    dt = vf.dt
    if dom.sdf(x[None, :])[0] > -2.0 * h:
        raise ValueError("point must be at least 2 cells inside the boundary")
    if dom.target_distance(x[None, :])[0] <= 2.0 * h:
        raise ValueError("point must be away from the target")
    if not (dt <= t <= vf.stationary_from - dt) and len(vf.times) > 1:
        raise ValueError("time must be interior to the stored grid")

    dphi_dt = (vf.at(t + dt, x) - vf.at(t - dt, x)) / (2.0 * dt) \
        if len(vf.times) > 1 else 0.0

    grad = np.zeros(dom.dim)
    for a in range(dom.dim):
        e = np.zeros(dom.dim)
        e[a] = h
        fwd = (vf.at(t, x + e) - vf.at(t, x)) / h
        bwd = (vf.at(t, x) - vf.at(t, x - e)) / h
        if abs(fwd - bwd) > 10.0 * h:
            return np.nan
        grad[a] = 0.5 * (fwd + bwd)

    k = speeds.at(t, x[None, :])[0]
    return float(-dphi_dt + np.linalg.norm(grad) * k - 1.0)


def boundary_supersolution_check(vf: ValueFunction, domain: Domain, t: float, x):
    """One-sided inward derivative of the value at a boundary point.

    Uses the second-order boundary stencil, which extrapolates the slope
    to the wall itself (obstacle shadows have square-root profiles whose
    one-cell average slope would otherwise be badly biased).  The
    boundary condition holds when the returned value is below tolerance,
    i.e. the outward gradient component is nonnegative.  Returns NaN
    where the two inward stencils disagree.
    """
    x = np.asarray(x, dtype=float)
    h = domain.cell_size
    if abs(domain.sdf(x[None, :])[0]) > 0.75 * h:
        raise ValueError("point must lie on the boundary")
    if domain.target_distance(x[None, :])[0] <= 2.0 * h:
        raise ValueError("point must be on the boundary away from the target")
    n = domain.sdf_gradient(x[None, :])[0]
    n = n / np.linalg.norm(n)
    inward = -n

    xb = domain.project_points(x[None, :])[0]
    p0 = vf.at(t, xb)
    p1 = vf.at(t, xb + h * inward)
    p2 = vf.at(t, xb + 2.0 * h * inward)
    s1 = (p1 - p0) / h
    s2 = (p2 - p1) / h
    if abs(s1 - s2) > 10.0 * h:
        return np.nan
    if domain.dim == 2:
        # ridge guard: the value must also be smooth along the wall
        tang = np.array([-inward[1], inward[0]])
        try:
            tp = vf.at(t, domain.project_points((xb + h * tang)[None, :])[0])
            tm = vf.at(t, domain.project_points((xb - h * tang)[None, :])[0])
        except MFGError:
            return np.nan
        if abs((tp - p0) / h - (p0 - tm) / h) > 10.0 * h:
            return np.nan
    return float(2.0 * s1 - s2)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def export_value_function_csv(vf: ValueFunction, path) -> None:
    """Write rows (t, i, j, phi); off-region nodes are skipped."""
    dom = vf.domain
    idx = np.argwhere(np.ones(dom.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,i,j,phi\n")
        for nslice, t in enumerate(vf.times):
            vals = vf.values[nslice].ravel()
            for k in range(len(vals)):
                if not np.isfinite(vals[k]):
                    continue
                i = idx[k][0]
                j = idx[k][1] if dom.dim == 2 else 0
                f.write(f"{t:.17g},{i},{j},{vals[k]:.17g}\n")


GRID_MAGIC = b"MTVF0001"


def write_grid_slice(path, t, dt, cell_size, origin, grid) -> None:
    """Binary dump of one value slice (see docs/FORMATS.md)."""
    grid = np.asarray(grid, dtype="<f8")
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<i", grid.ndim))
        for n in grid.shape:
            f.write(struct.pack("<i", n))
        f.write(struct.pack("<3d", t, dt, cell_size))
        f.write(struct.pack(f"<{grid.ndim}d", *np.asarray(origin, dtype=float)))
        f.write(grid.tobytes(order="C"))


def read_grid_slice(path):
    """Read a binary slice written by :func:`write_grid_slice`."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != GRID_MAGIC:
            raise MFGError(f"bad grid magic {magic!r}")
        (ndim,) = struct.unpack("<i", f.read(4))
        shape = struct.unpack(f"<{ndim}i", f.read(4 * ndim))
        t, dt, cell = struct.unpack("<3d", f.read(24))
        origin = np.array(struct.unpack(f"<{ndim}d", f.read(8 * ndim)))
        grid = np.frombuffer(f.read(), dtype="<f8").reshape(shape)
    return {"t": t, "dt": dt, "cell_size": cell, "origin": origin, "grid": grid}
