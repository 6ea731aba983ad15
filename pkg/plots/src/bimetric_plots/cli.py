"""plot grid/ablation: sweep CSVs in, deterministic SVG out."""

import argparse
import sys

from .render import METRICS, PlotSpec, render_ablation, render_grid


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plot", description="Render bimetric sweep CSVs as SVG figures.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("grid", "one subplot per dataset, curve per method"),
                            ("ablation", "one subplot, curve per start mode")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--csv", nargs="+", required=True, help="sweep CSV files")
        p.add_argument("--metric", choices=list(METRICS), default="ndcg_at_10")
        p.add_argument("--floor", type=float, default=0.0,
                       help="omit points below this y value")
        p.add_argument("--out", required=True, help="output SVG path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(csv_paths=tuple(args.csv), metric=args.metric,
                    out_path=args.out, floor=args.floor)
    try:
        if args.command == "grid":
            render_grid(spec)
        else:
            render_ablation(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
