"""`dnls-plot --artifacts <dir> --kind <kind> --out <file.png>`."""

from __future__ import annotations

import argparse
import sys

from .artifacts import ArtifactError
from .figures import KINDS, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dnls-plot", description=__doc__)
    parser.add_argument("--artifacts", required=True, help="run directory written by dnls")
    parser.add_argument("--kind", required=True, choices=sorted(KINDS))
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        path = render(args.artifacts, args.kind, args.out)
    except ArtifactError as e:
        print(f"dnls-plot: {e}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
