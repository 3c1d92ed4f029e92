"""Run the acceptance criteria and print one PASS/FAIL line each.

    python3 scripts/run_acceptance.py            # all twelve
    python3 scripts/run_acceptance.py 4 9 -v     # selected ones, with every check
"""

import argparse
import sys

from mh_ldp.config import Defaults
from mh_ldp.verify import CRITERIA


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("criteria", type=int, nargs="*", default=sorted(CRITERIA))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()

    d = Defaults()
    ok = True
    for i in args.criteria:
        res = CRITERIA[i](d, d.seed)
        print(res.summary(), f"[{res.wall_s:.1f}s]")
        if args.verbose:
            for c in res.checks:
                print(f"    {c.name}: {c.value:.6g} ({c.bound}) {'ok' if c.passed else 'MISS'}")
        ok &= res.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
