"""Result-bundle directory layout (see docs/FORMATS.md for schemas)."""

from __future__ import annotations

import os

import numpy as np

from .config import ScenarioConfig, render_config
from .equilibrium import EquilibriumResult
from .geometry import Domain, export_domain_csv
from .hjb import write_grid_slice
from .measures import export_density_csv
from .trajectories import export_trajectory_csv


def _write_keyvalues(path, pairs):
    with open(path, "w", encoding="utf-8") as f:
        for k, v in pairs:
            if isinstance(v, float):
                f.write(f"{k}={v:.17g}\n")
            else:
                f.write(f"{k}={v}\n")


def write_bundle(result: EquilibriumResult, domain: Domain,
                 cfg: ScenarioConfig, out_dir: str) -> None:
    """Write the full result bundle for one scenario run."""
    os.makedirs(out_dir, exist_ok=True)
    stride = cfg.output.snapshot_stride

    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as f:
        f.write(render_config(cfg))

    vf = result.value_function
    series = result.densities
    pairs = [
        ("scenario", cfg.name),
        ("dim", domain.dim),
        ("cell_size", float(domain.cell_size)),
        ("origin_x", float(domain.origin[0])),
        ("origin_y", float(domain.origin[1]) if domain.dim == 2 else 0.0),
        ("nx", domain.grid_shape[0]),
        ("ny", domain.grid_shape[1] if domain.dim == 2 else 1),
        ("dt", float(vf.dt)),
        ("n_times", len(series.times)),
        ("t_final", float(series.times[-1])),
        ("snapshot_stride", stride),
        ("bandwidth", float(series.bandwidth)),
        ("seed", cfg.equilibrium.seed),
        ("particle_count", result.ensemble.count),
        ("converged", int(result.converged)),
        ("iterations", result.iterations),
        ("final_gap", float(result.gaps[-1]) if result.gaps else float("nan")),
        ("optimality_gap", float(result.optimality_gap)),
        ("w1_tol", float(cfg.equilibrium.w1_tol)),
        ("status", result.status),
    ]
    _write_keyvalues(os.path.join(out_dir, "manifest.txt"), pairs)

    with open(os.path.join(out_dir, "gaps.csv"), "w", encoding="utf-8") as f:
        f.write("iteration,gap\n")
        for i, g in enumerate(result.gaps, start=1):
            f.write(f"{i},{g:.17g}\n")

    export_domain_csv(domain, os.path.join(out_dir, "domain.csv"))
    export_density_csv(series, domain, os.path.join(out_dir, "density.csv"),
                       stride=stride)
    _export_vf_strided(vf, domain, os.path.join(out_dir, "value_function.csv"),
                       stride)
    export_speed_field_csv_strided(result.speed_field,
                                   os.path.join(out_dir, "speed_field.csv"),
                                   stride)

    slices_dir = os.path.join(out_dir, "vf_slices")
    os.makedirs(slices_dir, exist_ok=True)
    for i in range(0, len(vf.times), stride):
        write_grid_slice(
            os.path.join(slices_dir, f"slice_{i:05d}.bin"),
            float(vf.times[i]), float(vf.dt), float(domain.cell_size),
            domain.origin, vf.values[i],
        )

    traj_dir = os.path.join(out_dir, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    limit = min(cfg.output.trajectory_limit, result.ensemble.count)
    with open(os.path.join(traj_dir, "manifest.csv"), "w",
              encoding="utf-8") as f:
        f.write("particle,weight,exit_time,stopped,file\n")
        for i in range(limit):
            tr = result.ensemble.trajectories[i]
            name = f"traj_{i:05d}.csv"
            f.write(
                f"{i},{result.ensemble.weights[i]:.17g},"
                f"{tr.exit_time:.17g},{int(tr.stopped)},{name}\n"
            )
            export_trajectory_csv(tr, domain, os.path.join(traj_dir, name))

    _write_keyvalues(
        os.path.join(out_dir, "residual_report.txt"),
        sorted(result.residual_report.items()),
    )


def _export_vf_strided(vf, domain, path, stride):
    idx = np.argwhere(np.ones(domain.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,i,j,phi\n")
        keep = list(range(0, len(vf.times), stride))
        if (len(vf.times) - 1) not in keep:
            keep.append(len(vf.times) - 1)
        for n in keep:
            vals = vf.values[n].ravel()
            for k in range(len(vals)):
                if not np.isfinite(vals[k]):
                    continue
                i = idx[k][0]
                j = idx[k][1] if domain.dim == 2 else 0
                f.write(f"{vf.times[n]:.17g},{i},{j},{vals[k]:.17g}\n")


def export_speed_field_csv_strided(field, path, stride):
    dom = field.domain
    idx = np.argwhere(np.ones(dom.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,i,j,k\n")
        for n in range(0, len(field.times), stride):
            vals = field.values[n].ravel()
            for c in range(len(vals)):
                i = idx[c][0]
                j = idx[c][1] if dom.dim == 2 else 0
                f.write(f"{field.times[n]:.17g},{i},{j},{vals[c]:.17g}\n")


REQUIRED_BUNDLE_FILES = (
    "manifest.txt",
    "config.cfg",
    "gaps.csv",
    "domain.csv",
    "density.csv",
    "value_function.csv",
    "residual_report.txt",
    os.path.join("trajectories", "manifest.csv"),
)


def check_bundle(path: str):
    """Return the list of missing documented files (empty when complete)."""
    missing = []
    for rel in REQUIRED_BUNDLE_FILES:
        if not os.path.isfile(os.path.join(path, rel)):
            missing.append(rel)
    return missing
