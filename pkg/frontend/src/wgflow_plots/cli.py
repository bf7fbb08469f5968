"""Command line: render convergence plots and density snapshots."""

from __future__ import annotations

import argparse
import sys

from .io import SchemaError
from .plots import plot_convergence, plot_snapshots


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgflow-plot")
    sub = parser.add_subparsers(dest="command", required=True)

    p_conv = sub.add_parser("convergence", help="log-log error plot from report CSVs")
    p_conv.add_argument("--in", dest="inputs", nargs="+", required=True)
    p_conv.add_argument("--out", required=True, help="output image path")

    p_snap = sub.add_parser("snapshots", help="density snapshots from a trajectory CSV")
    p_snap.add_argument("--in", dest="input", required=True)
    p_snap.add_argument("--times", required=True, help="comma-separated times")
    p_snap.add_argument("--out", required=True, help="output directory")
    p_snap.add_argument("--phase", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convergence":
            slopes = plot_convergence(args.inputs, args.out)
            for name, slope in slopes.items():
                print(f"{name}: slope {slope:.3f}")
            print(f"wrote {args.out}")
        else:
            times = [float(v) for v in args.times.split(",")]
            written = plot_snapshots(args.input, times, args.out, phase=args.phase)
            for path in written:
                print(f"wrote {path}")
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
