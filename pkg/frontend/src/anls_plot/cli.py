"""anls-plot --kind <k> --in <csv> [--in <csv> ...] --out <png>"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, PlotError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="anls-plot",
                                     description="figures from anls CSV logs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--title", default="")
    parser.add_argument("--logx", action="store_true", default=None)
    parser.add_argument("--logy", action="store_true", default=None)
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(inputs=args.inputs, kind=args.kind,
                          out_path=args.out, title=args.title,
                          logx=args.logx, logy=args.logy)
        render(spec)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
