"""Sweep of the ball-smoothed measures nu_s^n for the three-atom plateau instance.

    python3 scripts/smoothing_sweep.py --m 2048 --seed 7
"""

import argparse

from mh_ldp.config import Defaults
from mh_ldp.verify import smoothing_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=Defaults.smoothing_m)
    ap.add_argument("--seed", type=int, default=Defaults.smoothing_seed)
    args = ap.parse_args()

    rows, summary = smoothing_sweep(Defaults().replace({"smoothing_m": args.m}), args.seed)
    cols = list(rows[0])
    print(" ".join(f"{c:>14}" for c in cols))
    for row in rows:
        print(" ".join(f"{row[c]:>14.6g}" if isinstance(row[c], float) else f"{row[c]:>14}" for c in cols))
    for key, val in summary.items():
        print(f"{key}: {val}")


if __name__ == "__main__":
    main()
