"""Movement domains on regular grids.

A :class:`Domain` couples exact signed-distance geometry (analytic shape
primitives) with a rasterized view: an inside mask for the closed domain,
a target mask, nodal signed distances, outward normals on a tubular band
around the boundary, and an 8-connected grid graph used as a geodesic
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from ._interp import cell_centers, masked_interpolate, nearest_index
from .errors import (
    DegenerateShapeError,
    DisconnectedDomainError,
    DomainError,
    EmptyTargetError,
    OutOfBandError,
    ProjectionError,
    UndefinedNormalError,
)

_SQRT2 = float(np.sqrt(2.0))


# ---------------------------------------------------------------------------
# Shape primitives (vectorized signed distance + gradient)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Closed segment [a, b] on the line."""

    a: float
    b: float

    dim = 1

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])

    def narrowest_feature(self):
        return self.b - self.a

    def signed_distance(self, pts):
        x = np.atleast_2d(pts)[:, 0]
        return np.maximum(self.a - x, x - self.b)

    def gradient(self, pts):
        x = np.atleast_2d(pts)[:, 0]
        g = np.where(self.a - x > x - self.b, -1.0, 1.0)
        return g[:, None]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle [xmin, xmax] x [ymin, ymax]."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    dim = 2

    def bounding_box(self):
        return np.array([self.xmin, self.ymin]), np.array([self.xmax, self.ymax])

    def narrowest_feature(self):
        return min(self.xmax - self.xmin, self.ymax - self.ymin)

    def _center_half(self):
        c = np.array([(self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0])
        e = np.array([(self.xmax - self.xmin) / 2.0, (self.ymax - self.ymin) / 2.0])
        return c, e

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        c, e = self._center_half()
        q = np.abs(pts - c) - e
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        c, e = self._center_half()
        rel = pts - c
        q = np.abs(rel) - e
        g = np.zeros_like(pts)
        out = np.any(q > 0.0, axis=1)
        qp = np.maximum(q[out], 0.0) * np.sign(rel[out])
        norm = np.linalg.norm(qp, axis=1, keepdims=True)
        g[out] = qp / np.maximum(norm, 1e-300)
        ins = ~out
        axis = np.argmax(q[ins], axis=1)
        sgn = np.sign(rel[ins][np.arange(axis.size), axis])
        sgn = np.where(sgn == 0.0, 1.0, sgn)
        gi = np.zeros((axis.size, 2))
        gi[np.arange(axis.size), axis] = sgn
        g[ins] = gi
        return g


@dataclass(frozen=True)
class Disk:
    """Closed disk of given center and radius."""

    cx: float
    cy: float
    radius: float

    dim = 2

    def bounding_box(self):
        c = np.array([self.cx, self.cy])
        r = self.radius
        return c - r, c + r

    def narrowest_feature(self):
        return 2.0 * self.radius

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - [self.cx, self.cy], axis=1) - self.radius

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        rel = pts - np.array([self.cx, self.cy])
        norm = np.linalg.norm(rel, axis=1, keepdims=True)
        g = np.where(norm > 1e-12, rel / np.maximum(norm, 1e-300), 0.0)
        g[(norm <= 1e-12).ravel()] = [1.0, 0.0]
        return g


@dataclass(frozen=True)
class Annulus:
    """Ring between two concentric circles."""

    cx: float
    cy: float
    r_inner: float
    r_outer: float

    dim = 2

    def __post_init__(self):
        if not 0.0 < self.r_inner < self.r_outer:
            raise DomainError("annulus radii must satisfy 0 < r_inner < r_outer")

    def bounding_box(self):
        c = np.array([self.cx, self.cy])
        r = self.r_outer
        return c - r, c + r

    def narrowest_feature(self):
        return self.r_outer - self.r_inner

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        rho = np.linalg.norm(pts - [self.cx, self.cy], axis=1)
        return np.maximum(rho - self.r_outer, self.r_inner - rho)

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        rel = pts - np.array([self.cx, self.cy])
        rho = np.linalg.norm(rel, axis=1, keepdims=True)
        radial = rel / np.maximum(rho, 1e-300)
        outer_branch = (rho.ravel() - self.r_outer) >= (self.r_inner - rho.ravel())
        return np.where(outer_branch[:, None], radial, -radial)


@dataclass(frozen=True)
class BoxMinusObstacles:
    """Rectangle with disk obstacles removed."""

    box: Box
    obstacles: tuple

    dim = 2

    def __post_init__(self):
        for d in self.obstacles:
            lo, hi = d.bounding_box()
            if (
                lo[0] <= self.box.xmin
                or hi[0] >= self.box.xmax
                or lo[1] <= self.box.ymin
                or hi[1] >= self.box.ymax
            ):
                raise DomainError("obstacle must lie strictly inside the box")
        for i, a in enumerate(self.obstacles):
            for b in self.obstacles[i + 1 :]:
                gap = np.hypot(a.cx - b.cx, a.cy - b.cy) - a.radius - b.radius
                if gap <= 0.0:
                    raise DomainError("obstacles must be pairwise disjoint")

    def bounding_box(self):
        return self.box.bounding_box()

    def narrowest_feature(self):
        feats = [self.box.narrowest_feature()]
        for d in self.obstacles:
            feats.append(2.0 * d.radius)
            feats.append(min(d.cx - d.radius - self.box.xmin,
                             self.box.xmax - d.cx - d.radius,
                             d.cy - d.radius - self.box.ymin,
                             self.box.ymax - d.cy - d.radius))
        for i, a in enumerate(self.obstacles):
            for b in self.obstacles[i + 1 :]:
                feats.append(np.hypot(a.cx - b.cx, a.cy - b.cy) - a.radius - b.radius)
        return min(feats)

    def _candidates(self, pts):
        cands = [self.box.signed_distance(pts)]
        for d in self.obstacles:
            cands.append(-d.signed_distance(pts))
        return np.stack(cands, axis=0)

    def signed_distance(self, pts):
        return np.max(self._candidates(np.atleast_2d(pts)), axis=0)

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        cands = self._candidates(pts)
        branch = np.argmax(cands, axis=0)
        g = self.box.gradient(pts)
        for k, d in enumerate(self.obstacles, start=1):
            sel = branch == k
            if np.any(sel):
                g[sel] = -d.gradient(pts[sel])
        return g


# ---------------------------------------------------------------------------
# Target regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntervalEndTarget:
    """One endpoint of an interval domain."""

    side: str  # "left" or "right"

    def distance(self, pts, shape):
        x = np.atleast_2d(pts)[:, 0]
        e = shape.a if self.side == "left" else shape.b
        return np.abs(x - e)


@dataclass(frozen=True)
class BoxEdgeTarget:
    """One edge of a box boundary, optionally restricted to a range."""

    edge: str  # left/right/top/bottom
    lo: float | None = None
    hi: float | None = None

    def distance(self, pts, shape):
        pts = np.atleast_2d(pts)
        box = shape.box if isinstance(shape, BoxMinusObstacles) else shape
        if self.edge in ("left", "right"):
            xe = box.xmin if self.edge == "left" else box.xmax
            lo = box.ymin if self.lo is None else self.lo
            hi = box.ymax if self.hi is None else self.hi
            dx = np.abs(pts[:, 0] - xe)
            dy = np.maximum(np.maximum(lo - pts[:, 1], pts[:, 1] - hi), 0.0)
        else:
            ye = box.ymin if self.edge == "bottom" else box.ymax
            lo = box.xmin if self.lo is None else self.lo
            hi = box.xmax if self.hi is None else self.hi
            dx = np.abs(pts[:, 1] - ye)
            dy = np.maximum(np.maximum(lo - pts[:, 0], pts[:, 0] - hi), 0.0)
        return np.hypot(dx, dy)


@dataclass(frozen=True)
class ArcTarget:
    """Angular range of the outer circle of a disk or annulus domain."""

    angle_min: float  # radians
    angle_max: float

    def distance(self, pts, shape):
        pts = np.atleast_2d(pts)
        c = np.array([shape.cx, shape.cy])
        radius = shape.radius if isinstance(shape, Disk) else shape.r_outer
        rel = pts - c
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        # Wrap angles into a window centered on the arc midpoint.
        mid = 0.5 * (self.angle_min + self.angle_max)
        half = 0.5 * (self.angle_max - self.angle_min)
        off = np.mod(ang - mid + np.pi, 2.0 * np.pi) - np.pi
        rho = np.linalg.norm(rel, axis=1)
        on_arc = np.abs(off) <= half
        d_arc = np.abs(rho - radius)
        d_ends = np.full(len(pts), np.inf)
        for s in (-1.0, 1.0):
            end = c + radius * np.array(
                [np.cos(mid + s * half), np.sin(mid + s * half)]
            )
            d_ends = np.minimum(d_ends, np.linalg.norm(pts - end, axis=1))
        return np.where(on_arc, d_arc, d_ends)


@dataclass(frozen=True)
class InteriorTarget:
    """A closed interior region (disk, box, or interval) used as target."""

    region: object

    def distance(self, pts, shape):
        return np.maximum(self.region.signed_distance(np.atleast_2d(pts)), 0.0)


@dataclass(frozen=True)
class DomainSpec:
    """Recipe for building a :class:`Domain`.

    ``resolution`` is in cells per unit length; ``band_cells`` sets the
    width (in cells) of the signed-distance band kept outside the domain.
    """

    shape: object
    target: object
    resolution: float
    band_cells: int = 6


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


@dataclass
class Domain:
    """Rasterized movement domain; immutable after construction."""

    dim: int
    cell_size: float
    origin: np.ndarray
    grid_shape: tuple
    inside_mask: np.ndarray
    target_mask: np.ndarray
    signed_distance: np.ndarray
    normals: np.ndarray
    geodesic_constant: float
    band_width: float
    spec: DomainSpec
    # compact grid-graph data over inside cells
    _inside_flat: np.ndarray = field(repr=False, default=None)
    _compact_of_flat: np.ndarray = field(repr=False, default=None)
    _edges: tuple = field(repr=False, default=None)
    _graph: csr_matrix = field(repr=False, default=None)

    # -- continuous queries -------------------------------------------------

    def sdf(self, pts):
        """Exact signed distance from the analytic shape, vectorized."""
        return self.spec.shape.signed_distance(pts)

    def reach(self):
        """Distance within which the signed distance stays smooth.

        Conservative per-shape estimate: half the narrowest extent, capped
        by the smallest boundary curvature radius.
        """
        shape = self.spec.shape
        if isinstance(shape, Interval):
            return 0.5 * (shape.b - shape.a)
        if isinstance(shape, Box):
            return 0.5 * shape.narrowest_feature()
        if isinstance(shape, Disk):
            return shape.radius
        if isinstance(shape, Annulus):
            return min(shape.r_inner, 0.5 * (shape.r_outer - shape.r_inner))
        if isinstance(shape, BoxMinusObstacles):
            vals = [0.5 * shape.box.narrowest_feature()]
            vals += [d.radius for d in shape.obstacles]
            vals.append(0.5 * shape.narrowest_feature())
            return min(vals)
        return 0.5 * shape.narrowest_feature()

    def sdf_gradient(self, pts):
        return self.spec.shape.gradient(pts)

    def target_distance(self, pts):
        """Distance to the analytic target region, vectorized."""
        return self.spec.target.distance(pts, self.spec.shape)

    def contains(self, pts, tol=1e-9):
        return self.sdf(pts) <= tol

    def node_coordinates(self):
        """All grid node coordinates, shape (N, dim)."""
        return cell_centers(self.origin, self.cell_size, self.grid_shape)

    def clip_to_grid(self, pts):
        lo = self.origin
        hi = self.origin + self.cell_size * (np.asarray(self.grid_shape) - 1)
        return np.clip(pts, lo, hi)

    def project_points(self, pts):
        """Batch projection onto the closed domain (two correction steps)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        for _ in range(2):
            d = self.sdf(pts)
            out = d > 1e-12
            if not np.any(out):
                break
            pts[out] -= d[out, None] * self.sdf_gradient(pts[out])
        return pts

    def in_target_cell(self, pts):
        """True where the nearest grid node carries the target mask."""
        idx = nearest_index(pts, self.origin, self.cell_size, self.grid_shape)
        return self.target_mask[tuple(idx.T)]

    # -- grid-graph oracle ---------------------------------------------------

    def nearest_inside_compact(self, pts):
        """Compact inside-cell index of the nearest inside node."""
        pts = np.atleast_2d(pts)
        nodes = self.node_coordinates()[self._inside_flat]
        out = np.empty(len(pts), dtype=np.intp)
        for i, p in enumerate(pts):
            out[i] = np.argmin(np.linalg.norm(nodes - p, axis=1))
        return out

    def graph_distances(self, source_compact):
        """Grid-path lengths from one inside cell to all inside cells."""
        return dijkstra(self._graph, indices=source_compact, min_only=False)


def _grid_graph(inside_mask, cell_size):
    """Compact 8-connected (2-connected in 1D) graph over inside cells."""
    shape = inside_mask.shape
    dim = inside_mask.ndim
    flat_inside = np.flatnonzero(inside_mask.ravel())
    compact = np.full(inside_mask.size, -1, dtype=np.intp)
    compact[flat_inside] = np.arange(flat_inside.size)

    if dim == 1:
        offsets = [((1,), cell_size)]
    else:
        offsets = [
            ((1, 0), cell_size),
            ((0, 1), cell_size),
            ((1, 1), cell_size * _SQRT2),
            ((1, -1), cell_size * _SQRT2),
        ]

    idx = np.argwhere(inside_mask)
    rows, cols, lengths = [], [], []
    for off, w in offsets:
        nbr = idx + np.asarray(off)
        ok = np.ones(len(nbr), dtype=bool)
        for a in range(dim):
            ok &= (nbr[:, a] >= 0) & (nbr[:, a] < shape[a])
        src = idx[ok]
        dst = nbr[ok]
        ok2 = inside_mask[tuple(dst.T)]
        src = src[ok2]
        dst = dst[ok2]
        src_flat = np.ravel_multi_index(tuple(src.T), shape)
        dst_flat = np.ravel_multi_index(tuple(dst.T), shape)
        rows.append(compact[src_flat])
        cols.append(compact[dst_flat])
        lengths.append(np.full(len(src_flat), w))

    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.intp)
    lengths = np.concatenate(lengths) if lengths else np.empty(0)
    n = flat_inside.size
    graph = csr_matrix(
        (np.concatenate([lengths, lengths]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    return flat_inside, compact, (rows, cols, lengths), graph


def build_domain(spec: DomainSpec) -> Domain:
    """Rasterize a :class:`DomainSpec` into a :class:`Domain`.

    Raises
    ------
    DomainError
        If the resolution cannot resolve the narrowest feature.
    EmptyTargetError, DegenerateShapeError, DisconnectedDomainError
        For degenerate rasterizations.
    """
    shape = spec.shape
    dim = shape.dim
    h = 1.0 / float(spec.resolution)
    if shape.narrowest_feature() < 8.0 * h - 1e-12:
        raise DomainError(
            f"resolution {spec.resolution} gives fewer than 8 cells across the "
            f"narrowest feature ({shape.narrowest_feature():.4g})"
        )

    lo, hi = shape.bounding_box()
    band = spec.band_cells * h
    origin = lo - band
    n_span = np.ceil((hi - lo) / h - 1e-9).astype(int)
    grid_shape = tuple(int(n) + 2 * spec.band_cells + 1 for n in n_span)

    centers = cell_centers(origin, h, grid_shape)
    sdf = shape.signed_distance(centers).reshape(grid_shape)
    inside = sdf <= 1e-9
    if not np.any(sdf < 0.0):
        raise DegenerateShapeError("shape rasterizes to no interior cells")

    tdist = spec.target.distance(centers, shape).reshape(grid_shape)
    target = (tdist <= 0.5 * h * np.sqrt(dim) + 1e-12) & inside
    if not np.any(target):
        raise EmptyTargetError("target region rasterizes to no cells")

    grads = shape.gradient(centers)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    grads = grads / np.maximum(norms, 1e-300)
    on_band = np.abs(sdf.ravel()) <= band + 1e-12
    normals = np.full((centers.shape[0], dim), np.nan)
    normals[on_band] = grads[on_band]
    normals = normals.reshape(grid_shape + (dim,))

    flat_inside, compact, edges, graph = _grid_graph(inside, h)
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        raise DisconnectedDomainError(
            f"inside cells split into {n_comp} components; domain rejected"
        )

    dom = Domain(
        dim=dim,
        cell_size=h,
        origin=np.asarray(origin, dtype=float),
        grid_shape=grid_shape,
        inside_mask=inside,
        target_mask=target,
        signed_distance=sdf,
        normals=normals,
        geodesic_constant=1.0,
        band_width=band,
        spec=spec,
        _inside_flat=flat_inside,
        _compact_of_flat=compact,
        _edges=edges,
        _graph=graph,
    )
    dom.geodesic_constant = _estimate_geodesic_constant(dom)
    return dom


def _estimate_geodesic_constant(dom: Domain, max_sources: int = 40) -> float:
    """Max ratio of grid-path length to Euclidean distance over sampled pairs."""
    nodes = dom.node_coordinates()[dom._inside_flat]
    n = len(nodes)
    rng = np.random.default_rng(0)
    picks = [0, n - 1]
    for a in range(dom.dim):
        picks.append(int(np.argmin(nodes[:, a])))
        picks.append(int(np.argmax(nodes[:, a])))
    extra = max_sources - len(picks)
    if extra > 0 and n > len(picks):
        picks.extend(rng.choice(n, size=min(extra, n), replace=False).tolist())
    sources = np.unique(np.asarray(picks, dtype=np.intp))

    dist = dijkstra(dom._graph, indices=sources, min_only=False)
    best = 1.0
    floor = 4.0 * dom.cell_size
    for k, s in enumerate(sources):
        eu = np.linalg.norm(nodes - nodes[s], axis=1)
        sel = eu >= floor
        if np.any(sel):
            best = max(best, float(np.max(dist[k, sel] / eu[sel])))
    return best


# ---------------------------------------------------------------------------
# Point operations
# ---------------------------------------------------------------------------


def signed_distance_at(domain: Domain, x) -> float:
    """Interpolated signed distance at a point inside the stored band."""
    x = np.asarray(x, dtype=float)
    lo = domain.origin - 1e-9
    hi = domain.origin + domain.cell_size * (np.asarray(domain.grid_shape) - 1) + 1e-9
    if np.any(x < lo) or np.any(x > hi):
        raise OutOfBandError(f"point {x} outside the stored distance band")
    return float(
        masked_interpolate(
            domain.signed_distance, None, x, domain.origin, domain.cell_size
        )
    )


def outward_normal_at(domain: Domain, x) -> np.ndarray:
    """Unit outward normal (gradient of the signed distance) near the boundary."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = domain.sdf(x)[0]
    if abs(d) > domain.band_width + 1e-12:
        raise UndefinedNormalError(
            f"point at signed distance {d:.4g} is outside the normal band "
            f"(width {domain.band_width:.4g})"
        )
    g = domain.sdf_gradient(x)[0]
    return g / np.linalg.norm(g)


def geodesic_distance(domain: Domain, x, y) -> float:
    """Length of the shortest inside grid path between two domain points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    for p in (x, y):
        if not domain.contains(np.atleast_2d(p))[0]:
            raise DomainError(f"point {p} is not in the closed domain")
    cx, cy = domain.nearest_inside_compact(np.stack([x, y]))
    if cx == cy:
        return 0.0
    dist = dijkstra(domain._graph, indices=int(cx), min_only=True)
    val = dist[int(cy)]
    if not np.isfinite(val):
        raise DisconnectedDomainError("no inside grid path between the points")
    return float(val)


def project_to_domain(domain: Domain, x) -> np.ndarray:
    """Project a band point onto the closed domain along the distance gradient."""
    x = np.asarray(x, dtype=float)
    p = domain.project_points(x[None, :])[0]
    if domain.sdf(p[None, :])[0] > 1e-9:
        raise ProjectionError(f"projection of {x} failed to land inside")
    return p


def export_domain_csv(domain: Domain, path) -> None:
    """Write one row per grid node: i, j, x, y, inside, target, signed_distance."""
    centers = domain.node_coordinates()
    idx = np.argwhere(np.ones(domain.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("i,j,x,y,inside,target,signed_distance\n")
        for k in range(len(centers)):
            i = idx[k][0]
            j = idx[k][1] if domain.dim == 2 else 0
            x = centers[k][0]
            y = centers[k][1] if domain.dim == 2 else 0.0
            f.write(
                f"{i},{j},{x:.17g},{y:.17g},"
                f"{int(domain.inside_mask.ravel()[k])},"
                f"{int(domain.target_mask.ravel()[k])},"
                f"{domain.signed_distance.ravel()[k]:.17g}\n"
            )
