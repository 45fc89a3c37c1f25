"""Command-line entry point.

    figplot <kind> --in DIR --out FILE [--group COL]

Kinds: regret-curves, tradeoff, order-ratio, bias-cancel. DIR is a
benchmark output directory holding the CSV files; FILE is the image to
write. Exit status 0 on success; on failure a single line
`error: {json}` goes to stderr and the status is nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import FigureSpec, render
from .schema import FIGURE_KINDS


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="figplot",
        description="Render figures from benchmark CSV output directories",
    )
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="in_dir", required=True, help="CSV directory")
    parser.add_argument("--out", dest="out_path", required=True, help="image file")
    parser.add_argument(
        "--group",
        default=None,
        help="grouping column override (bias-cancel only)",
    )
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            in_dir=Path(args.in_dir),
            out_path=Path(args.out_path),
            group=args.group,
        )
        out = render(spec)
        print(out)
        return 0
    except Exception as exc:
        line = json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
        )
        print(f"error: {line}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
