"""Search for a non-commuting regenerating pair and compare it with the
frozen fixture shipped in the package.

    python3 scripts/find_noncommuting_pair.py [--limit N] [--write PATH]

Without --limit the whole grid is scanned, which takes much longer than the
truncated scan that already reproduces the fixture.
"""

import argparse
import sys
from pathlib import Path

from lllab.instances import load_noncommuting_fixture, dump_fixture, search_noncommuting_pair


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--limit", type=int, default=2000, help="number of support pairs to score")
    ap.add_argument("--write", help="write the found fixture here")
    args = ap.parse_args()
    found = search_noncommuting_pair(limit=args.limit)
    text = dump_fixture(found)
    if args.write:
        Path(args.write).write_text(text)
    same = text == dump_fixture(load_noncommuting_fixture())
    print(f"f={found.f} g={found.g} sigma={found.sigma} tau={found.tau}")
    print("matches frozen fixture" if same else "differs from frozen fixture")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
