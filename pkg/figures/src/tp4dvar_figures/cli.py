"""Command-line figure renderer for tp4dvar experiment artifacts.

Example:
    tp4dvar-figures --kind errors \
        --input results/convergence.csv --input results/report.json \
        --out errors.png
"""

from __future__ import annotations

import argparse
import sys

from .plots import KINDS, FigureSpec, plot
from .schema import SchemaError


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tp4dvar-figures",
        description="Render figures from tp4dvar CSV/JSON artifacts",
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--input", action="append", required=True, metavar="PATH",
        help="artifact path; repeat for multiple inputs",
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--variables", default="0,1,2", metavar="I,J,K",
        help="state indices for iterate plots (default: 0,1,2)",
    )
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        variables = tuple(int(v) for v in args.variables.split(","))
    except ValueError:
        print(f"invalid --variables {args.variables!r}: want comma-separated "
              "integers", file=sys.stderr)
        return 1
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(args.input),
            out=args.out,
            variables=variables,
        )
        path = plot(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
