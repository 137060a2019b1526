"""Net size, reduced factor and codimension as the containment factor grows.

    python3 scripts/reduction_sweep.py --dim 4 --seeds 5
"""
import argparse

import numpy as np

from perturbsolve.covering import reduce_until, verify_cover
from perturbsolve.operators import image_of_ball
from perturbsolve.scenario import random_dense_operators
from perturbsolve.solver import codimension_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--factors", type=float, nargs="+", default=[0.3, 0.6, 1.0, 1.5, 2.0, 3.0])
    ap.add_argument("--budget", type=int, default=20000)
    args = ap.parse_args()

    print(f"{'factor':>7}{'net':>7}{'defect':>8}{'reduced':>10}{'cover':>8}{'rank codim':>12}")
    for factor in args.factors:
        nets, defects, reduced, cover, codims = [], [], [], [], []
        for seed in range(args.seeds):
            f, g, U = random_dense_operators(args.dim, factor, seed)
            chain = reduce_until(f, g, U, sampler_budget=args.budget, seed=seed)
            first = chain.rounds[0]
            cover.append(verify_cover(first.net, image_of_ball(f, U), image_of_ball(g, U), seed=seed + 1))
            nets.append(chain.net_size)
            defects.append(chain.defect_basis.shape[1])
            reduced.append(chain.reduced_factor)
            codims.append(codimension_report(f, g, chain)["rank_codim"])
        print(f"{factor:>7.2f}{np.mean(nets):>7.1f}{np.mean(defects):>8.1f}{max(reduced):>10.4f}"
              f"{max(cover):>8.4f}{max(codims):>12d}")


if __name__ == "__main__":
    main()
