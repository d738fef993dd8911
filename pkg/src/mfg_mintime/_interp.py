"""Masked multilinear interpolation on regular grids (1D and 2D)."""

from __future__ import annotations

import itertools

import numpy as np


def grid_coordinates(origin, cell_size, shape):
    """Return per-axis node coordinate arrays for a regular grid."""
    return tuple(
        origin[a] + cell_size * np.arange(shape[a]) for a in range(len(shape))
    )


def cell_centers(origin, cell_size, shape):
    """Return an (N, dim) array with the coordinates of every grid node."""
    axes = grid_coordinates(origin, cell_size, shape)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def nearest_index(points, origin, cell_size, shape):
    """Nearest grid node multi-index for each point, clipped to the grid."""
    points = np.atleast_2d(points)
    idx = np.rint((points - np.asarray(origin)) / cell_size).astype(np.intp)
    for a, n in enumerate(shape):
        np.clip(idx[:, a], 0, n - 1, out=idx[:, a])
    return idx


def masked_interpolate(values, valid, points, origin, cell_size):
    """Multilinear interpolation using only valid nodes.

    Corner weights of invalid nodes (``valid`` false or non-finite value)
    are dropped and the rest renormalized, so queries next to the domain
    boundary stay usable.  Points whose surrounding corners are all invalid
    yield NaN.

    Parameters
    ----------
    values : ndarray
        Grid of sampled values, shape ``shape``.
    valid : ndarray of bool or None
        Nodes allowed to contribute.  ``None`` means all finite nodes.
    points : ndarray
        Query points, shape ``(N, dim)`` or ``(dim,)``.
    origin, cell_size : grid geometry.

    Returns
    -------
    ndarray of shape ``(N,)`` (or scalar for a single point).
    """
    single = np.ndim(points) == 1
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim = pts.shape[1]
    shape = values.shape
    finite = np.isfinite(values)
    ok = finite if valid is None else (np.asarray(valid, bool) & finite)

    s = (pts - np.asarray(origin)) / cell_size
    base = np.floor(s).astype(np.intp)
    for a in range(dim):
        np.clip(base[:, a], 0, shape[a] - 2, out=base[:, a])
    frac = np.clip(s - base, 0.0, 1.0)

    num = np.zeros(len(pts))
    den = np.zeros(len(pts))
    for corner in itertools.product((0, 1), repeat=dim):
        w = np.ones(len(pts))
        idx = []
        for a, c in enumerate(corner):
            w = w * (frac[:, a] if c else 1.0 - frac[:, a])
            idx.append(base[:, a] + c)
        idx = tuple(idx)
        usable = ok[idx]
        v = np.where(usable, values[idx], 0.0)
        num += np.where(usable, w * v, 0.0)
        den += np.where(usable, w, 0.0)

    out = np.full(len(pts), np.nan)
    good = den > 1e-12
    out[good] = num[good] / den[good]
    return out[0] if single else out
