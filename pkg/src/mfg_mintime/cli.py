"""Command-line entry points.

Subcommands::

    mfg-mintime solve <config|preset>   run the fixed-point iteration
    mfg-mintime verify <config|preset>  run the certificate suite
    mfg-mintime oracle <config|preset>  export the graph-oracle travel times
    mfg-mintime export-plots-data <bundle>

Exit codes: 0 success/converged, 3 iteration budget exhausted,
4 scenario error, 5 numerics error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bundle import REQUIRED_BUNDLE_FILES, check_bundle, write_bundle
from .config import ScenarioConfig, load_preset, parse_config, render_config
from .congestion import epsilon0_estimate, sample_speed_field
from .equilibrium import fixed_point_iterate, stationary_horizon
from .errors import (
    CFLViolationError,
    ConfigError,
    DomainError,
    EmptySupportError,
    MFGError,
    UnreachableTargetError,
)
from .geometry import build_domain, export_domain_csv
from .hjb import dijkstra_oracle
from .measures import pushforward_series, sample_initial_particles
from .verification import model_k_min, run_verification_suite

EXIT_OK = 0
EXIT_MAX_ITERS = 3
EXIT_SCENARIO = 4
EXIT_NUMERICS = 5


def _load_config(ref: str) -> ScenarioConfig:
    if os.path.isfile(ref):
        name = os.path.splitext(os.path.basename(ref))[0]
        with open(ref, "r", encoding="utf-8") as f:
            return parse_config(f.read(), name=name)
    return load_preset(ref)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        cfg.equilibrium.seed = args.seed
    if getattr(args, "out", None):
        cfg.output.directory = args.out
    return cfg


def _prepare_times(cfg: ScenarioConfig, domain):
    cfg.equilibrium.times = stationary_horizon(
        domain, model_k_min(cfg.model), cfg.numerics.dt
    )


def run_scenario(cfg: ScenarioConfig, quiet: bool = True) -> int:
    """Execute one scenario end to end and write its result bundle.

    Returns the exit status (0 converged, 3 iteration budget exhausted);
    scenario and numerics problems raise and are mapped to codes by
    :func:`main`.
    """
    domain = build_domain(cfg.domain_spec)
    _prepare_times(cfg, domain)

    if cfg.numerics.epsilon is not None:
        initial = sample_initial_particles(
            cfg.m0_spec, domain, cfg.equilibrium.particle_count,
            cfg.equilibrium.seed,
        )
        frozen = pushforward_series(initial, domain, cfg.equilibrium.times,
                                    cfg.numerics.bandwidth)
        field = sample_speed_field(cfg.model, frozen, domain)
        eps0 = epsilon0_estimate(field, domain)
        if not cfg.numerics.epsilon < eps0:
            raise DomainError(
                f"epsilon={cfg.numerics.epsilon:g} is not below the "
                f"admissible threshold {eps0:g}"
            )

    result = fixed_point_iterate(domain, cfg.model, cfg.m0_spec,
                                 cfg.equilibrium)
    write_bundle(result, domain, cfg, cfg.output.directory)
    if not quiet:
        gap = result.gaps[-1] if result.gaps else float("nan")
        print(
            f"{cfg.name}: iterations={result.iterations} "
            f"final_gap={gap:.6g} optimality_gap={result.optimality_gap:.6g} "
            f"continuity={result.residual_report['continuity_residual']:.3g} "
            f"boundary_margin={result.residual_report['boundary_margin_min']:.3g} "
            f"-> {cfg.output.directory}"
        )
    return EXIT_OK if result.converged else EXIT_MAX_ITERS


def cmd_solve(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    if not args.quiet:
        print(render_config(cfg))
    return run_scenario(cfg, quiet=args.quiet)


def cmd_verify(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    checks = run_verification_suite(cfg, quiet=args.quiet)
    if not args.quiet:
        n_fail = sum(1 for c in checks if not c.passed)
        print(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    domain = build_domain(cfg.domain_spec)
    _prepare_times(cfg, domain)
    initial = sample_initial_particles(
        cfg.m0_spec, domain, cfg.equilibrium.particle_count,
        cfg.equilibrium.seed,
    )
    frozen = pushforward_series(initial, domain, cfg.equilibrium.times,
                                cfg.numerics.bandwidth)
    field = sample_speed_field(cfg.model, frozen, domain)
    values = dijkstra_oracle(domain, field.values[-1])

    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    export_domain_csv(domain, os.path.join(out_dir, "domain.csv"))
    path = os.path.join(out_dir, "oracle.csv")
    idx = np.argwhere(np.ones(domain.grid_shape, dtype=bool))
    with open(path, "w", encoding="utf-8") as f:
        f.write("i,j,value\n")
        flat = values.ravel()
        for k in range(len(flat)):
            if not np.isfinite(flat[k]):
                continue
            i = idx[k][0]
            j = idx[k][1] if domain.dim == 2 else 0
            f.write(f"{i},{j},{flat[k]:.17g}\n")
    if not args.quiet:
        print(
            f"{cfg.name}: oracle max={np.nanmax(values):.6g} "
            f"mean={np.nanmean(values[domain.inside_mask]):.6g} -> {path}"
        )
    return EXIT_OK


def cmd_export_plots_data(args) -> int:
    missing = check_bundle(args.bundle)
    if missing:
        raise DomainError(
            "bundle is missing documented files: " + ", ".join(missing)
        )
    listing = os.path.join(args.bundle, "plots_data_manifest.txt")
    with open(listing, "w", encoding="utf-8") as f:
        for rel in REQUIRED_BUNDLE_FILES:
            f.write(rel + "\n")
        extra = os.path.join(args.bundle, "speed_field.csv")
        if os.path.isfile(extra):
            f.write("speed_field.csv\n")
    if not args.quiet:
        print(f"plot inputs verified -> {listing}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mfg-mintime",
        description="Minimal-time crowd games: solve, verify, export.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
        sp.add_argument("--out", type=str, default=None,
                        help="override the output directory")
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("solve", help="run the fixed-point iteration")
    sp.add_argument("config", help="config file path or preset name")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("verify", help="run the certificate suite")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("oracle", help="export graph-oracle travel times")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("export-plots-data",
                        help="validate a bundle for plotting")
    sp.add_argument("bundle")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_export_plots_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_SCENARIO
    except (DomainError, EmptySupportError, UnreachableTargetError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (CFLViolationError, MFGError) as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
