"""Exact base-case moment at macroscopic time K t against its large-K limit.

Example: python scripts/fk_limit.py --k 2 --t 0.5 --K 20 50 100
"""

import argparse

from ddbranch import SimConfig
from ddbranch import ctmc_oracle as oracle
from ddbranch import moments as mo


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--K", type=float, nargs="+", default=[20, 50, 100])
    a = p.parse_args()
    base = SimConfig(K=1, Z0=1)
    limit = mo.limit_prediction(base.law, base.q, a.k, a.t)
    print("K,exact,limit,error")
    for K in a.K:
        cfg = SimConfig(K=K, Z0=int(round(K)), beta=a.beta)
        val = oracle.exact_base_moment(cfg, a.k, a.t * K)
        print(f"{K:g},{val:.6f},{limit:.6f},{val - limit:+.6f}")


if __name__ == "__main__":
    main()
