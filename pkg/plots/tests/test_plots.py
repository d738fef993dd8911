"""Rendering from real bundles produced through the primary CLI."""

import os

import pytest

from mfg_mintime.cli import main as solver_main
from mfg_mintime_plots import (
    Bundle,
    MissingFileError,
    render_convergence,
    render_density_filmstrip,
    render_residual_summary,
    render_value_and_paths,
)
from mfg_mintime_plots.cli import main as plots_main

CORRIDOR_CFG = """
[domain]
shape = interval
a = 0
b = 1
side = right
resolution = 50
band_cells = 8

[model]
kind = kernel
k_min = 0.55
k_max = 1.0
g_intercept = 1.0
g_slope = 0.15
chi_radius = 0.3

[m0]
kind = uniform_interval
a = 0.1
b = 0.4

[equilibrium]
particle_count = 200
seed = 17

[output]
dir = {out}
snapshot_stride = 25
trajectory_limit = 8
"""

OBSTACLE_CFG = """
[domain]
shape = box_minus_obstacles
xmin = 0
xmax = 1
ymin = 0
ymax = 1
obstacles = 0.5,0.5,0.15
target = boundary
edge = right
resolution = 28
band_cells = 5

[model]
kind = constant
k0 = 1.0

[m0]
kind = uniform_box
xmin = 0.08
xmax = 0.3
ymin = 0.3
ymax = 0.7

[numerics]
n_dirs = 24

[equilibrium]
particle_count = 150
max_iters = 2
seed = 17

[output]
dir = {out}
snapshot_stride = 30
trajectory_limit = 8
"""


@pytest.fixture(scope="module")
def corridor_bundle(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("runs") / "corridor")
    cfg = tmp_path_factory.mktemp("cfg") / "c.cfg"
    cfg.write_text(CORRIDOR_CFG.format(out=out))
    assert solver_main(["solve", str(cfg), "--quiet"]) == 0
    return out


@pytest.fixture(scope="module")
def obstacle_bundle(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("runs") / "obstacle")
    cfg = tmp_path_factory.mktemp("cfg") / "o.cfg"
    cfg.write_text(OBSTACLE_CFG.format(out=out))
    assert solver_main(["solve", str(cfg), "--quiet"]) == 0
    return out


@pytest.mark.parametrize("which", ["corridor", "obstacle"])
def test_all_four_figures_render(which, corridor_bundle, obstacle_bundle,
                                 tmp_path):
    bundle_dir = corridor_bundle if which == "corridor" else obstacle_bundle
    out = tmp_path / "figs"
    out.mkdir()
    b = Bundle(bundle_dir)
    frames = render_density_filmstrip(b, stride=5, out_dir=str(out))
    assert frames and all(os.path.getsize(f) > 0 for f in frames)
    for fn in (render_value_and_paths, render_convergence,
               render_residual_summary):
        path = fn(b, out_dir=str(out))
        assert os.path.getsize(path) > 0


def test_cli_renders(corridor_bundle, tmp_path):
    out = tmp_path / "cli-figs"
    code = plots_main([corridor_bundle, "--stride", "10", "--out", str(out),
                       "--quiet"])
    assert code == 0
    names = sorted(os.listdir(out))
    assert "convergence.png" in names
    assert "residual_summary.png" in names
    assert "value_and_paths.png" in names
    assert any(n.startswith("density_") for n in names)


def test_value_figure_time_selection(corridor_bundle, tmp_path):
    b = Bundle(corridor_bundle)
    out = tmp_path / "t-fig"
    out.mkdir()
    # beyond-horizon times fall back to the stationary slice
    path = render_value_and_paths(b, t=1e9, out_dir=str(out))
    assert os.path.getsize(path) > 0


def test_missing_file_error_on_empty_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(MissingFileError):
        Bundle(str(empty))
    assert plots_main([str(empty), "--quiet"]) == 4


def test_single_frame_when_one_slice(corridor_bundle, tmp_path):
    b = Bundle(corridor_bundle)
    out = tmp_path / "one"
    out.mkdir()
    frames = render_density_filmstrip(b, stride=10_000, out_dir=str(out))
    assert len(frames) == 1
