"""Command line figure renderer.

    plotgen --spec figures.json
    plotgen --family delta-hist --in results.csv --out hist.png

Exit codes: 0 success, 1 bad arguments / schema mismatch, 2 unexpected
failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .render import FAMILIES, FigureSpec, RenderError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plotgen",
                                description="render figures from result tables")
    p.add_argument("--spec", help="JSON file with a list of figure specs")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   help="input results CSV (repeatable)")
    p.add_argument("--out", help="output image path")
    p.add_argument("--title", default="")
    return p


def _specs_from_args(args) -> list:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as f:
            doc = json.load(f)
        if isinstance(doc, dict):
            doc = [doc]
        return [
            FigureSpec(
                family=item["family"],
                inputs=list(item.get("inputs", [])),
                out=item["out"],
                title=item.get("title", ""),
            )
            for item in doc
        ]
    if not args.family or not args.inputs or not args.out:
        raise RenderError("need either --spec or all of --family/--in/--out")
    return [FigureSpec(family=args.family, inputs=args.inputs, out=args.out,
                       title=args.title)]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        specs = _specs_from_args(args)
        for spec in specs:
            info = render(spec)
            print(json.dumps(info))
        return 0
    except (RenderError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"plotgen error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"plotgen failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
