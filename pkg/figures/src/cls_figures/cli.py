"""Command-line entry point: `cls-figures render <kind> --in <csv...> --out <img>`.

Exit codes: 0 success, 2 bad input (missing file, wrong header, unknown kind).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from cls_figures.render import FIGURE_KINDS, FigureSpec, InputError, render

EXIT_OK = 0
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cls-figures", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    rend = sub.add_parser("render", help="render one figure from CSV artifacts")
    rend.add_argument("kind", choices=list(FIGURE_KINDS))
    rend.add_argument("--in", dest="inputs", nargs="+", required=True,
                      metavar="CSV", help="input CSV artifact(s)")
    rend.add_argument("--out", dest="output", required=True,
                      help="output image (format by extension: .png, .svg, ...)")
    rend.add_argument("--dpi", type=int, default=150)
    rend.add_argument("--times", default=None,
                      help="comma list of snapshot times (xp-plane only)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    extra = {}
    if args.times:
        extra["times"] = [float(t) for t in args.times.split(",") if t.strip()]
    try:
        spec = FigureSpec(
            kind=args.kind, inputs=tuple(args.inputs), output=args.output,
            dpi=args.dpi, extra=extra,
        )
        out = render(spec)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
