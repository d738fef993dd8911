"""Scenario configuration: a small sectioned key-value format.

The format is deliberately minimal so parsing can report every problem
with its line number: ``[section]`` headers, ``key = value`` lines, and
``#`` comments.  Unknown keys, missing sections, duplicated keys, and
out-of-range values are all collected before failing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .equilibrium import EquilibriumConfig
from .errors import ConfigError
from .geometry import (
    Annulus,
    ArcTarget,
    Box,
    BoxEdgeTarget,
    BoxMinusObstacles,
    Disk,
    DomainSpec,
    IntervalEndTarget,
    InteriorTarget,
    Interval,
)
from .congestion import ConstantCongestion, KernelCongestion
from .measures import GaussianM0, PointMassesM0, UniformM0


@dataclass
class Numerics:
    dt: float
    n_dirs: int
    bandwidth: float
    epsilon: float | None  # None: derived at run time
    constraint_tol: float
    outflow_tol: float


@dataclass
class OutputConfig:
    directory: str
    snapshot_stride: int = 10
    trajectory_limit: int = 100


@dataclass
class ScenarioConfig:
    name: str
    domain_spec: DomainSpec
    model: object
    m0_spec: object
    numerics: Numerics
    equilibrium: EquilibriumConfig
    output: OutputConfig
    negative_control: bool = False
    raw_values: dict = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# Low-level parsing
# ---------------------------------------------------------------------------


class _Problems:
    def __init__(self):
        self.items = []

    def add(self, line, message):
        where = f"line {line}: " if line else ""
        self.items.append(f"{where}{message}")

    def raise_if_any(self):
        if self.items:
            raise ConfigError(self.items)


def _split_sections(text, problems):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            problems.add(lineno, f"expected 'key = value', got {line!r}")
            continue
        if current is None:
            problems.add(lineno, "key outside any [section]")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        sec = sections[current]
        if key in sec:
            problems.add(
                lineno,
                f"duplicate key '{key}' in [{current}] "
                f"(first defined at line {sec[key][1]})",
            )
            continue
        sec[key] = (value, lineno)
    return sections


_KNOWN_KEYS = {
    "domain": {
        "shape", "a", "b", "xmin", "xmax", "ymin", "ymax", "cx", "cy",
        "radius", "r_inner", "r_outer", "obstacles", "target", "side",
        "edge", "lo", "hi", "angle_min_deg", "angle_max_deg",
        "region", "t_cx", "t_cy", "t_radius", "t_xmin", "t_xmax",
        "t_ymin", "t_ymax", "t_a", "t_b", "resolution", "band_cells",
    },
    "model": {
        "kind", "k0", "k_min", "k_max", "g_intercept", "g_slope",
        "g_floor", "chi_kind", "chi_radius",
    },
    "m0": {"kind", "a", "b", "xmin", "xmax", "ymin", "ymax", "cx", "cy",
           "radius", "sigma", "points"},
    "numerics": {"dt", "n_dirs", "bandwidth", "epsilon", "constraint_tol",
                 "outflow_tol"},
    "equilibrium": {"damping", "max_iters", "w1_tol", "particle_count",
                    "seed"},
    "output": {"dir", "snapshot_stride", "trajectory_limit"},
    "verification": {"negative_control"},
}

_REQUIRED_SECTIONS = ("domain", "model", "m0")


class _Section:
    """Typed access to one parsed section with error collection."""

    def __init__(self, name, data, problems):
        self.name = name
        self.data = data or {}
        self.problems = problems

    def _raw(self, key):
        return self.data.get(key, (None, 0))

    def has(self, key):
        return key in self.data

    def get_float(self, key, default=None, low=None, high=None, required=False):
        value, line = self._raw(key)
        if value is None:
            if required:
                self.problems.add(0, f"[{self.name}] missing required key '{key}'")
            return default
        try:
            x = float(value)
        except ValueError:
            self.problems.add(line, f"[{self.name}] {key}: not a number: {value!r}")
            return default
        if low is not None and x < low:
            self.problems.add(line, f"[{self.name}] {key}={x:g} below minimum {low:g}")
        if high is not None and x > high:
            self.problems.add(line, f"[{self.name}] {key}={x:g} above maximum {high:g}")
        return x

    def get_int(self, key, default=None, low=None, required=False):
        value, line = self._raw(key)
        if value is None:
            if required:
                self.problems.add(0, f"[{self.name}] missing required key '{key}'")
            return default
        try:
            x = int(value)
        except ValueError:
            self.problems.add(line, f"[{self.name}] {key}: not an integer: {value!r}")
            return default
        if low is not None and x < low:
            self.problems.add(line, f"[{self.name}] {key}={x} below minimum {low}")
        return x

    def get_str(self, key, default=None, choices=None, required=False):
        value, line = self._raw(key)
        if value is None:
            if required:
                self.problems.add(0, f"[{self.name}] missing required key '{key}'")
            return default
        value = value.lower()
        if choices and value not in choices:
            self.problems.add(
                line, f"[{self.name}] {key}={value!r} not one of {sorted(choices)}"
            )
            return default
        return value

    def get_bool(self, key, default=False):
        value, line = self._raw(key)
        if value is None:
            return default
        v = value.lower()
        if v in ("true", "1", "yes", "on"):
            return True
        if v in ("false", "0", "no", "off"):
            return False
        self.problems.add(line, f"[{self.name}] {key}: not a boolean: {value!r}")
        return default


def _parse_domain(sec: _Section, problems):
    shape_kind = sec.get_str(
        "shape", required=True,
        choices={"interval", "box", "disk", "annulus", "box_minus_obstacles"},
    )
    resolution = sec.get_float("resolution", required=True, low=1.0)
    band_cells = sec.get_int("band_cells", default=6, low=1)
    if shape_kind is None or resolution is None:
        return None

    shape = None
    if shape_kind == "interval":
        a = sec.get_float("a", required=True)
        b = sec.get_float("b", required=True)
        if a is not None and b is not None:
            if b <= a:
                problems.add(0, "[domain] interval requires a < b")
            else:
                shape = Interval(a, b)
    elif shape_kind in ("box", "box_minus_obstacles"):
        vals = [sec.get_float(k, required=True)
                for k in ("xmin", "xmax", "ymin", "ymax")]
        if None not in vals:
            if vals[1] <= vals[0] or vals[3] <= vals[2]:
                problems.add(0, "[domain] box requires xmin < xmax and ymin < ymax")
            else:
                box = Box(*vals)
                if shape_kind == "box":
                    shape = box
                else:
                    raw, line = sec._raw("obstacles")
                    disks = []
                    if raw is None:
                        problems.add(0, "[domain] missing required key 'obstacles'")
                    else:
                        for part in raw.split(";"):
                            nums = [p for p in part.replace(",", " ").split() if p]
                            if len(nums) != 3:
                                problems.add(
                                    line, f"[domain] obstacle needs cx,cy,r: {part!r}"
                                )
                                continue
                            try:
                                cx, cy, r = (float(x) for x in nums)
                                disks.append(Disk(cx, cy, r))
                            except ValueError:
                                problems.add(line, f"[domain] bad obstacle: {part!r}")
                    if disks:
                        try:
                            shape = BoxMinusObstacles(box, tuple(disks))
                        except Exception as exc:
                            problems.add(line, f"[domain] {exc}")
    elif shape_kind == "disk":
        cx = sec.get_float("cx", required=True)
        cy = sec.get_float("cy", required=True)
        r = sec.get_float("radius", required=True, low=0.0)
        if None not in (cx, cy, r):
            shape = Disk(cx, cy, r)
    elif shape_kind == "annulus":
        cx = sec.get_float("cx", required=True)
        cy = sec.get_float("cy", required=True)
        ri = sec.get_float("r_inner", required=True, low=0.0)
        ro = sec.get_float("r_outer", required=True, low=0.0)
        if None not in (cx, cy, ri, ro):
            if not 0 < ri < ro:
                problems.add(0, "[domain] annulus requires 0 < r_inner < r_outer")
            else:
                shape = Annulus(cx, cy, ri, ro)

    target_kind = sec.get_str("target", default="boundary",
                              choices={"boundary", "interior"})
    target = None
    if shape is not None and target_kind == "boundary":
        if shape_kind == "interval":
            side = sec.get_str("side", required=True, choices={"left", "right"})
            if side:
                target = IntervalEndTarget(side)
        elif shape_kind in ("box", "box_minus_obstacles"):
            edge = sec.get_str("edge", required=True,
                               choices={"left", "right", "top", "bottom"})
            lo = sec.get_float("lo") if sec.has("lo") else None
            hi = sec.get_float("hi") if sec.has("hi") else None
            if edge:
                target = BoxEdgeTarget(edge, lo, hi)
        else:
            amin = sec.get_float("angle_min_deg", required=True)
            amax = sec.get_float("angle_max_deg", required=True)
            if None not in (amin, amax):
                if amax <= amin:
                    problems.add(0, "[domain] requires angle_min_deg < angle_max_deg")
                else:
                    target = ArcTarget(np.deg2rad(amin), np.deg2rad(amax))
    elif shape is not None:
        region_kind = sec.get_str("region", required=True,
                                  choices={"disk", "box", "interval"})
        if region_kind == "disk":
            cx = sec.get_float("t_cx", required=True)
            cy = sec.get_float("t_cy", required=True)
            r = sec.get_float("t_radius", required=True, low=0.0)
            if None not in (cx, cy, r):
                target = InteriorTarget(Disk(cx, cy, r))
        elif region_kind == "box":
            vals = [sec.get_float(k, required=True)
                    for k in ("t_xmin", "t_xmax", "t_ymin", "t_ymax")]
            if None not in vals:
                target = InteriorTarget(Box(*vals))
        elif region_kind == "interval":
            a = sec.get_float("t_a", required=True)
            b = sec.get_float("t_b", required=True)
            if None not in (a, b):
                target = InteriorTarget(Interval(a, b))

    if shape is None or target is None:
        return None
    return DomainSpec(shape=shape, target=target, resolution=resolution,
                      band_cells=band_cells)


def _parse_model(sec: _Section, problems):
    kind = sec.get_str("kind", required=True, choices={"constant", "kernel"})
    if kind is None:
        return None
    if kind == "constant":
        k0 = sec.get_float("k0", required=True, low=0.0)
        k_min = sec.get_float("k_min", default=k0, low=0.0)
        k_max = sec.get_float("k_max", default=k0)
        if None in (k0, k_min, k_max):
            return None
        return ConstantCongestion(k0=k0, k_min=min(k_min, k0), k_max=max(k_max, k0))
    k_min = sec.get_float("k_min", required=True, low=1e-12)
    k_max = sec.get_float("k_max", required=True)
    gi = sec.get_float("g_intercept", required=True)
    gs = sec.get_float("g_slope", required=True, low=0.0)
    gf = sec.get_float("g_floor", default=0.0, low=0.0)
    ck = sec.get_str("chi_kind", default="quartic",
                     choices={"quartic", "triangular"})
    cr = sec.get_float("chi_radius", required=True, low=1e-12)
    if None in (k_min, k_max, gi, gs, cr):
        return None
    if k_max < k_min:
        problems.add(0, "[model] k_max must be at least k_min")
        return None
    return KernelCongestion(g_intercept=gi, g_slope=gs, k_min=k_min,
                            k_max=k_max, chi_radius=cr, chi_kind=ck,
                            g_floor=gf)


def _parse_m0(sec: _Section, problems, dim):
    kind = sec.get_str(
        "kind", required=True,
        choices={"uniform_interval", "uniform_box", "uniform_disk",
                 "gaussian", "points"},
    )
    if kind is None:
        return None
    if kind == "uniform_interval":
        a = sec.get_float("a", required=True)
        b = sec.get_float("b", required=True)
        if None in (a, b) or b <= a:
            problems.add(0, "[m0] uniform_interval requires a < b")
            return None
        return UniformM0(Interval(a, b))
    if kind == "uniform_box":
        vals = [sec.get_float(k, required=True)
                for k in ("xmin", "xmax", "ymin", "ymax")]
        if None in vals:
            return None
        return UniformM0(Box(*vals))
    if kind == "uniform_disk":
        cx = sec.get_float("cx", required=True)
        cy = sec.get_float("cy", required=True)
        r = sec.get_float("radius", required=True, low=0.0)
        if None in (cx, cy, r):
            return None
        return UniformM0(Disk(cx, cy, r))
    if kind == "gaussian":
        cx = sec.get_float("cx", required=True)
        sigma = sec.get_float("sigma", required=True, low=1e-12)
        if dim == 2:
            cy = sec.get_float("cy", required=True)
            if None in (cx, cy, sigma):
                return None
            return GaussianM0((cx, cy), sigma)
        if None in (cx, sigma):
            return None
        return GaussianM0((cx,), sigma)
    raw, line = sec._raw("points")
    if raw is None:
        problems.add(0, "[m0] missing required key 'points'")
        return None
    pts, masses = [], []
    for part in raw.split(";"):
        nums = [p for p in part.replace(",", " ").split() if p]
        if len(nums) != dim + 1:
            problems.add(line, f"[m0] point needs {dim} coords and a mass: {part!r}")
            continue
        try:
            vals = [float(x) for x in nums]
        except ValueError:
            problems.add(line, f"[m0] bad point: {part!r}")
            continue
        pts.append(tuple(vals[:-1]))
        masses.append(vals[-1])
    if not pts:
        return None
    return PointMassesM0(tuple(pts), tuple(masses))


def parse_config(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse and fully validate a scenario; raises with all problems listed."""
    problems = _Problems()
    sections = _split_sections(text, problems)

    for sec_name, keys in sections.items():
        if sec_name not in _KNOWN_KEYS:
            problems.add(0, f"unknown section [{sec_name}]")
            continue
        for key, (_, line) in keys.items():
            if key not in _KNOWN_KEYS[sec_name]:
                problems.add(line, f"unknown key '{key}' in [{sec_name}]")
    for required in _REQUIRED_SECTIONS:
        if required not in sections:
            problems.add(0, f"missing section [{required}]")
    problems.raise_if_any()

    dom_sec = _Section("domain", sections.get("domain"), problems)
    model_sec = _Section("model", sections.get("model"), problems)
    m0_sec = _Section("m0", sections.get("m0"), problems)
    num_sec = _Section("numerics", sections.get("numerics"), problems)
    eq_sec = _Section("equilibrium", sections.get("equilibrium"), problems)
    out_sec = _Section("output", sections.get("output"), problems)
    ver_sec = _Section("verification", sections.get("verification"), problems)

    domain_spec = _parse_domain(dom_sec, problems)
    model = _parse_model(model_sec, problems)
    dim = domain_spec.shape.dim if domain_spec else 2
    m0_spec = _parse_m0(m0_sec, problems, dim)
    problems.raise_if_any()

    h = 1.0 / domain_spec.resolution
    k_max = model.k_max if not model.is_constant else max(
        model.k0, 1e-12
    )
    cfl = 0.5 * h / k_max
    dt = num_sec.get_float("dt", default=cfl, low=1e-12)
    if dt is not None and dt > cfl + 1e-15:
        problems.add(
            0,
            f"[numerics] dt={dt:g} violates the CFL bound "
            f"cell_size/(2*k_max)={cfl:g} (cell_size={h:g}, k_max={k_max:g})",
        )
    n_dirs = num_sec.get_int("n_dirs", default=2 if dim == 1 else 16,
                             low=2 if dim == 1 else 16)
    bandwidth = num_sec.get_float("bandwidth", default=2.0 * h, low=h)
    epsilon = None
    if num_sec.has("epsilon"):
        raw, _line = num_sec._raw("epsilon")
        if raw.lower() != "auto":
            epsilon = num_sec.get_float("epsilon", low=1e-12)
    constraint_tol = num_sec.get_float("constraint_tol", default=h / 10.0,
                                       low=0.0)
    outflow_tol = num_sec.get_float("outflow_tol", default=0.1, low=0.0)

    damping = eq_sec.get_float("damping", default=0.5, low=1e-9, high=1.0)
    max_iters = eq_sec.get_int("max_iters", default=30, low=1)
    w1_tol = eq_sec.get_float("w1_tol", default=2.0 * h, low=1e-12)
    particles = eq_sec.get_int("particle_count", default=2000, low=1)
    seed = eq_sec.get_int("seed", default=12345)

    out_dir = out_sec._raw("dir")[0] or f"runs/{name}"
    stride = out_sec.get_int("snapshot_stride", default=10, low=1)
    traj_limit = out_sec.get_int("trajectory_limit", default=100, low=0)
    negative = ver_sec.get_bool("negative_control", default=False)
    problems.raise_if_any()

    equilibrium = EquilibriumConfig(
        damping=damping,
        max_iters=max_iters,
        w1_tol=w1_tol,
        particle_count=particles,
        times=None,  # built against the rasterized domain at run time
        bandwidth=bandwidth,
        n_dirs=n_dirs,
        seed=seed,
    )
    numerics = Numerics(dt=dt, n_dirs=n_dirs, bandwidth=bandwidth,
                        epsilon=epsilon, constraint_tol=constraint_tol,
                        outflow_tol=outflow_tol)
    output = OutputConfig(directory=out_dir, snapshot_stride=stride,
                          trajectory_limit=traj_limit)
    return ScenarioConfig(
        name=name,
        domain_spec=domain_spec,
        model=model,
        m0_spec=m0_spec,
        numerics=numerics,
        equilibrium=equilibrium,
        output=output,
        negative_control=negative,
    )


def render_config(cfg: ScenarioConfig) -> str:
    """Echo the effective configuration (defaults resolved)."""
    lines = [f"# effective configuration: {cfg.name}"]
    shape = cfg.domain_spec.shape
    lines.append("[domain]")
    if isinstance(shape, Interval):
        lines += [f"shape = interval", f"a = {shape.a:g}", f"b = {shape.b:g}"]
    elif isinstance(shape, BoxMinusObstacles):
        b = shape.box
        obs = "; ".join(f"{d.cx:g},{d.cy:g},{d.radius:g}" for d in shape.obstacles)
        lines += [
            "shape = box_minus_obstacles",
            f"xmin = {b.xmin:g}", f"xmax = {b.xmax:g}",
            f"ymin = {b.ymin:g}", f"ymax = {b.ymax:g}",
            f"obstacles = {obs}",
        ]
    elif isinstance(shape, Box):
        lines += [
            "shape = box",
            f"xmin = {shape.xmin:g}", f"xmax = {shape.xmax:g}",
            f"ymin = {shape.ymin:g}", f"ymax = {shape.ymax:g}",
        ]
    elif isinstance(shape, Disk):
        lines += ["shape = disk", f"cx = {shape.cx:g}", f"cy = {shape.cy:g}",
                  f"radius = {shape.radius:g}"]
    elif isinstance(shape, Annulus):
        lines += ["shape = annulus", f"cx = {shape.cx:g}", f"cy = {shape.cy:g}",
                  f"r_inner = {shape.r_inner:g}", f"r_outer = {shape.r_outer:g}"]
    target = cfg.domain_spec.target
    if isinstance(target, IntervalEndTarget):
        lines += ["target = boundary", f"side = {target.side}"]
    elif isinstance(target, BoxEdgeTarget):
        lines += ["target = boundary", f"edge = {target.edge}"]
        if target.lo is not None:
            lines.append(f"lo = {target.lo:g}")
        if target.hi is not None:
            lines.append(f"hi = {target.hi:g}")
    elif isinstance(target, ArcTarget):
        lines += [
            "target = boundary",
            f"angle_min_deg = {np.rad2deg(target.angle_min):g}",
            f"angle_max_deg = {np.rad2deg(target.angle_max):g}",
        ]
    elif isinstance(target, InteriorTarget):
        region = target.region
        lines.append("target = interior")
        if isinstance(region, Disk):
            lines += ["region = disk", f"t_cx = {region.cx:g}",
                      f"t_cy = {region.cy:g}", f"t_radius = {region.radius:g}"]
        elif isinstance(region, Box):
            lines += ["region = box", f"t_xmin = {region.xmin:g}",
                      f"t_xmax = {region.xmax:g}", f"t_ymin = {region.ymin:g}",
                      f"t_ymax = {region.ymax:g}"]
        elif isinstance(region, Interval):
            lines += ["region = interval", f"t_a = {region.a:g}",
                      f"t_b = {region.b:g}"]
    lines += [
        f"resolution = {cfg.domain_spec.resolution:g}",
        f"band_cells = {cfg.domain_spec.band_cells}",
        "",
        "[model]",
    ]
    model = cfg.model
    if isinstance(model, ConstantCongestion):
        lines += ["kind = constant", f"k0 = {model.k0:g}",
                  f"k_min = {model.k_min:g}", f"k_max = {model.k_max:g}"]
    else:
        lines += [
            "kind = kernel",
            f"k_min = {model.k_min:g}", f"k_max = {model.k_max:g}",
            f"g_intercept = {model.g_intercept:g}",
            f"g_slope = {model.g_slope:g}", f"g_floor = {model.g_floor:g}",
            f"chi_kind = {model.chi_kind}",
            f"chi_radius = {model.chi_radius:g}",
        ]
    lines += ["", "[m0]"]
    m0 = cfg.m0_spec
    if isinstance(m0, UniformM0):
        region = m0.region
        if isinstance(region, Interval):
            lines += ["kind = uniform_interval", f"a = {region.a:g}",
                      f"b = {region.b:g}"]
        elif isinstance(region, Box):
            lines += ["kind = uniform_box", f"xmin = {region.xmin:g}",
                      f"xmax = {region.xmax:g}", f"ymin = {region.ymin:g}",
                      f"ymax = {region.ymax:g}"]
        else:
            lines += ["kind = uniform_disk", f"cx = {region.cx:g}",
                      f"cy = {region.cy:g}", f"radius = {region.radius:g}"]
    elif isinstance(m0, GaussianM0):
        lines.append("kind = gaussian")
        lines.append(f"cx = {m0.center[0]:g}")
        if len(m0.center) == 2:
            lines.append(f"cy = {m0.center[1]:g}")
        lines.append(f"sigma = {m0.sigma:g}")
    else:
        pts = "; ".join(
            ",".join(f"{v:g}" for v in (*p, w))
            for p, w in zip(m0.points, m0.masses)
        )
        lines += ["kind = points", f"points = {pts}"]
    n = cfg.numerics
    lines += [
        "",
        "[numerics]",
        f"dt = {n.dt:.12g}",
        f"n_dirs = {n.n_dirs}",
        f"bandwidth = {n.bandwidth:.12g}",
        f"epsilon = {'auto' if n.epsilon is None else format(n.epsilon, '.12g')}",
        f"constraint_tol = {n.constraint_tol:.12g}",
        f"outflow_tol = {n.outflow_tol:.12g}",
        "",
        "[equilibrium]",
        f"damping = {cfg.equilibrium.damping:g}",
        f"max_iters = {cfg.equilibrium.max_iters}",
        f"w1_tol = {cfg.equilibrium.w1_tol:.12g}",
        f"particle_count = {cfg.equilibrium.particle_count}",
        f"seed = {cfg.equilibrium.seed}",
        "",
        "[output]",
        f"dir = {cfg.output.directory}",
        f"snapshot_stride = {cfg.output.snapshot_stride}",
        f"trajectory_limit = {cfg.output.trajectory_limit}",
    ]
    if cfg.negative_control:
        lines += ["", "[verification]", "negative_control = true"]
    return "\n".join(lines) + "\n"


def list_presets():
    """Names of the configuration presets shipped with the package."""
    out = []
    for entry in resources.files("mfg_mintime.presets").iterdir():
        if entry.name.endswith(".cfg"):
            out.append(entry.name[:-4])
    return sorted(out)


def load_preset(name: str) -> ScenarioConfig:
    """Parse a shipped preset by name."""
    path = resources.files("mfg_mintime.presets") / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError([f"unknown preset {name!r}; available: {list_presets()}"])
    return parse_config(path.read_text(encoding="utf-8"), name=name)
