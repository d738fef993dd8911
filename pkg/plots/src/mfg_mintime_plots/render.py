"""Figure rendering from a loaded bundle (matplotlib, Agg)."""

from __future__ import annotations

import os

import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bundle import Bundle

_SAVE = dict(dpi=110, metadata={"Software": None})


def _target_overlay(ax, bundle: Bundle):
    xs, ys = bundle.axis_coordinates()
    _inside, target = bundle.domain_masks()
    if bundle.dim == 2:
        ti, tj = np.nonzero(target)
        ax.scatter(xs[ti], ys[tj], s=6, c="red", marker="s", zorder=5,
                   label="target")
    else:
        for x in xs[target]:
            ax.axvline(x, color="red", lw=1.0, alpha=0.7)


def render_density_filmstrip(bundle: Bundle, stride: int = 1, out_dir="."):
    """One frame per stride-th stored density slice, shared color scale."""
    slices = bundle.density_slices()
    times = sorted(slices)
    keep = times[::stride] or times[:1]
    vmax = max(float(slices[t].max()) for t in keep) or 1.0
    xs, ys = bundle.axis_coordinates()
    paths = []
    for n, t in enumerate(keep):
        fig, ax = plt.subplots(figsize=(5, 4))
        if bundle.dim == 2:
            im = ax.imshow(slices[t].T, origin="lower", vmin=0.0, vmax=vmax,
                           extent=(xs[0], xs[-1], ys[0], ys[-1]),
                           cmap="viridis")
            fig.colorbar(im, ax=ax, label="density")
        else:
            ax.plot(xs, slices[t], lw=1.5)
            ax.set_ylim(0.0, 1.05 * vmax)
            ax.set_ylabel("density")
        _target_overlay(ax, bundle)
        ax.set_title(f"crowd density at t = {t:.3f}")
        ax.set_xlabel("x")
        path = os.path.join(out_dir, f"density_{n:04d}.png")
        fig.savefig(path, **_SAVE)
        plt.close(fig)
        paths.append(path)
    return paths


def render_value_and_paths(bundle: Bundle, t: float | None = None,
                           out_dir="."):
    """Exit-time contours at one time with the sampled paths overlaid."""
    slices = bundle.value_slices()
    times = sorted(slices)
    if t is None:
        t_pick = times[0]
    else:
        t_pick = min(times, key=lambda s: abs(s - t))
    grid = slices[t_pick]
    xs, ys = bundle.axis_coordinates()
    trajs = bundle.trajectories(limit=40)
    if not trajs:
        warnings.warn("bundle has no trajectories; rendering contours only",
                      stacklevel=2)

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    if bundle.dim == 2:
        cs = ax.contour(xs, ys, grid.T, levels=14, cmap="plasma")
        ax.clabel(cs, inline=True, fontsize=6)
        for tr in trajs:
            ax.plot(tr[:, 1], tr[:, 2], lw=0.8, color="steelblue", alpha=0.8)
        ax.set_ylabel("y")
    else:
        ax.plot(xs, grid, lw=1.5, color="purple", label="exit time")
        for tr in trajs:
            ax.plot(tr[:, 1], tr[:, 0], lw=0.7, color="steelblue", alpha=0.7)
        ax.set_ylabel("exit time / elapsed time")
        if not trajs:
            ax.text(0.05, 0.9, "no trajectories exported",
                    transform=ax.transAxes)
    _target_overlay(ax, bundle)
    ax.set_xlabel("x")
    ax.set_title(f"value function at t = {t_pick:.3f} with sample paths")
    path = os.path.join(out_dir, "value_and_paths.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_convergence(bundle: Bundle, out_dir="."):
    """Log-scale gap history with the convergence tolerance line."""
    history = bundle.gap_history()
    tol = float(bundle.manifest.get("w1_tol", "nan"))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if history:
        its = [i for i, _ in history]
        gaps = [g for _, g in history]
        ax.semilogy(its, gaps, marker="o", lw=1.2)
    if np.isfinite(tol):
        ax.axhline(tol, color="red", ls="--", lw=1.0, label="tolerance")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("sup-over-time W1 gap")
    ax.set_title("fixed-point convergence")
    path = os.path.join(out_dir, "convergence.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_residual_summary(bundle: Bundle, out_dir="."):
    """Horizontal bars for every reported residual."""
    report = bundle.residuals()
    names, vals = [], []
    for k in sorted(report):
        try:
            vals.append(float(report[k]))
            names.append(k)
        except ValueError:
            continue
    fig, ax = plt.subplots(figsize=(6, 0.35 * max(len(names), 4) + 1.2))
    ax.barh(range(len(names)), vals, color="slategray")
    ax.set_yticks(range(len(names)), names, fontsize=7)
    ax.set_xscale("symlog", linthresh=1e-6)
    ax.set_xlabel("value")
    ax.set_title("residual report")
    fig.tight_layout()
    path = os.path.join(out_dir, "residual_summary.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path
