"""``plots <bundle> [--stride N] [--t T] [--out dir]`` entry point."""

from __future__ import annotations

import argparse
import os
import sys

from .bundle import Bundle, BundleError, MissingFileError
from .render import (
    render_convergence,
    render_density_filmstrip,
    render_residual_summary,
    render_value_and_paths,
)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="plots",
        description="Render figures from an mfg-mintime result bundle.",
    )
    p.add_argument("bundle", help="bundle directory")
    p.add_argument("--stride", type=int, default=1,
                   help="keep every N-th stored density slice")
    p.add_argument("--t", type=float, default=None,
                   help="time for the value-function figure")
    p.add_argument("--out", type=str, default=None,
                   help="output directory (default: <bundle>/figures)")
    p.add_argument("--quiet", action="store_true")
    args = p.parse_args(argv)

    out_dir = args.out or os.path.join(args.bundle, "figures")
    try:
        bundle = Bundle(args.bundle)
        os.makedirs(out_dir, exist_ok=True)
        written = []
        written += render_density_filmstrip(bundle, stride=args.stride,
                                            out_dir=out_dir)
        written.append(render_value_and_paths(bundle, t=args.t,
                                              out_dir=out_dir))
        written.append(render_convergence(bundle, out_dir=out_dir))
        written.append(render_residual_summary(bundle, out_dir=out_dir))
    except MissingFileError as exc:
        print(f"missing-file error: {exc}", file=sys.stderr)
        return 4
    except BundleError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        return 4
    if not args.quiet:
        print(f"wrote {len(written)} figures to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
