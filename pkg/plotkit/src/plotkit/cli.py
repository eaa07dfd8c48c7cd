"""plotkit command line: `plotkit <figure-kind> --in ... --out ...`.

Inputs by kind:
    entropy       one or more run export directories
    role_entropy  exactly one run export directory
    lengths       one or more run export directories (smoothed, default 0.9)
    passk         one or more pass@k CSV files
    sparsity      one or more sparsity CSV files (rows become bars)
    probe         exactly one probe directory (lengths + solve-rate CSVs)

Exit codes: 0 ok, 1 runtime failure, 2 usage or schema error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, render
from .io import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit", description=__doc__.splitlines()[0])
    parser.add_argument("kind", choices=FIGURE_KINDS, help="figure kind")
    parser.add_argument(
        "--in", dest="inputs", action="append", required=True,
        help="input path; repeat for overlays",
    )
    parser.add_argument("--out", required=True, help="output image path (e.g. figure.png)")
    parser.add_argument(
        "--smoothing", type=float, default=None,
        help="exponential smoothing factor in [0,1); default 0.9 for lengths, 0 otherwise",
    )
    parser.add_argument(
        "--label", dest="labels", action="append",
        help="curve label; repeat to match --in order",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(Path(p) for p in args.inputs),
            output=Path(args.out),
            smoothing=args.smoothing,
            labels=tuple(args.labels) if args.labels else None,
        )
        out = render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
