"""-(1/n) log E[exp(-sum f(X_i))] against its limit inf_nu {nu(f) + I(nu)}.

Runs on the two-state example with a random or given f.

    python3 scripts/laplace_convergence.py --f 1.0 0.0
"""

import argparse

import numpy as np

from mh_ldp.rate import laplace_limit
from mh_ldp.sampler import log_laplace_functional_exact
from mh_ldp.verify import two_state_kernel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--f", type=float, nargs=2, default=[1.0, 0.0])
    ap.add_argument("--x0", type=int, default=0)
    ap.add_argument("--ns", type=int, nargs="+", default=[4, 16, 64, 256, 1024, 4096])
    args = ap.parse_args()

    k = two_state_kernel()
    f = np.asarray(args.f)
    limit = laplace_limit(k, f)
    print(f"limit = {limit:.10f}")
    for n in args.ns:
        val = -log_laplace_functional_exact(k, f, n, args.x0) / n
        print(f"n={n:6d}  value={val:.10f}  n*gap={n * abs(val - limit):.4f}")


if __name__ == "__main__":
    main()
