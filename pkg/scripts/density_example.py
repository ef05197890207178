"""Density excursions: Monte Carlo exit probability next to the exact banded-chain value.

Example: python scripts/density_example.py --K 500 --T 5 --runs 200 --gamma 0.2
"""

import argparse
import math

from ddbranch import SimConfig
from ddbranch import kingman_test as kt


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--K", type=float, nargs="+", default=[50, 100, 200, 400])
    p.add_argument("--T", type=float, default=2.0)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    a = p.parse_args()
    print("K,horizon,mc_exit,mc_se,exact_exit")
    for K in a.K:
        cfg = SimConfig(K=K, Z0=int(round(K)))
        rep = kt.density_concentration_test(cfg, a.T, a.runs, [a.gamma], seed=a.seed, threads=a.threads)
        print(f"{K:g},{K * a.T:g},{rep.exit_probability[0]:.4f},{rep.exit_se[0]:.4f},"
              f"{rep.exact_exit_probability[0]:.4f}")


if __name__ == "__main__":
    main()
