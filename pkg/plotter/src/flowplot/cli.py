"""Batch renderer CLI: trace JSON or grid CSV in, image + sidecar out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import PlotError, TraceFigureSpec, render_grid, render_trace


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowplot",
        description="Render refinement traces and threshold grids to static figures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="per-step class-probability heatmap")
    p.add_argument("trace", help="trace JSON file")
    p.add_argument("--out", default=None, help="image path (default: <trace>.png)")
    p.add_argument("--min-prob", type=float, default=0.01,
                   help="display a class iff it reaches this probability at any step")
    p.add_argument("--format", choices=["png", "svg"], default="png")
    p.add_argument("--sidecar", default=None, help="sidecar JSON path")
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("grid", help="threshold-grid heatmap")
    p.add_argument("grid", help="grid CSV file")
    p.add_argument("--out", default=None, help="image path (default: <grid>.png)")
    p.add_argument("--format", choices=["png", "svg"], default="png")
    p.add_argument("--sidecar", default=None, help="sidecar JSON path")
    p.set_defaults(fn=cmd_grid)
    return parser


def cmd_trace(args) -> int:
    out = args.out or str(Path(args.trace).with_suffix(f".{args.format}"))
    spec = TraceFigureSpec(min_probability=args.min_prob, fmt=args.format)
    image, sidecar = render_trace(args.trace, out, spec, sidecar_path=args.sidecar)
    print(f"wrote {image} and {sidecar}")
    return 0


def cmd_grid(args) -> int:
    out = args.out or str(Path(args.grid).with_suffix(f".{args.format}"))
    image, sidecar = render_grid(args.grid, out, fmt=args.format, sidecar_path=args.sidecar)
    print(f"wrote {image} and {sidecar}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
