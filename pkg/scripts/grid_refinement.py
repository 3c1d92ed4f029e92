"""Delta-rate and hybrid-gap convergence under grid refinement.

Prints the gap |I_m(delta_x) + log r(x)| for the Gaussian random-walk
instance and the hybrid decomposition gap at each grid size.

    python3 scripts/grid_refinement.py --levels 128 256 512 1024
"""

import argparse
import math

from mh_ldp.kernel import continuum_rejection
from mh_ldp.rate import rate_delta, rate_hybrid
from mh_ldp.verify import gaussian_instance, hybrid_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[128, 256, 512, 1024])
    ap.add_argument("--x", type=float, default=0.3, help="atom position for the delta rate")
    args = ap.parse_args()

    print(f"{'m':>6} {'delta gap':>12} {'ratio':>7} {'hybrid gap':>12}")
    prev = None
    for m in args.levels:
        k = gaussian_instance(m)
        x = k.space.cell_of(args.x)
        gap = abs(rate_delta(k, x).value + math.log(continuum_rejection(k, float(k.space.points[x]))))
        hyb = rate_hybrid(hybrid_fixture(k.space), k, compare_flat=True).gap
        ratio = f"{prev / gap:7.3f}" if prev else " " * 7
        print(f"{m:6d} {gap:12.4e} {ratio} {hyb:12.4e}")
        prev = gap


if __name__ == "__main__":
    main()
