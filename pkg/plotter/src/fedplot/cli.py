"""Standalone figure tool: fedplot --kind convergence --csv metrics.csv --out fig.png"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedplot",
        description="Render federated adapter training figures from metrics CSVs",
    )
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument(
        "--csv", action="append", required=True, dest="csv_paths",
        help="input metrics CSV; repeat to overlay several files",
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--group-by", help="grouping column (default depends on kind)")
    parser.add_argument("--log-x", action="store_true")
    parser.add_argument("--log-y", dest="log_y", action="store_true", default=None)
    parser.add_argument("--no-log-y", dest="log_y", action="store_false")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        csv_paths=args.csv_paths,
        out_path=args.out,
        group_by=args.group_by,
        log_x=args.log_x,
        log_y=args.log_y,
    )
    try:
        result = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if result.empty:
        print(f"no data rows; wrote placeholder figure to {result.out_path}", file=sys.stderr)
    else:
        counts = {m: len(v) for m, v in result.curves_per_panel.items()}
        print(f"wrote {result.out_path}: panels {counts}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
