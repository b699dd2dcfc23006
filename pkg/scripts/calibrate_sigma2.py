"""Monte Carlo check of the CV-LASSO residual variance estimate.

n=800, p=2000, fixed-pool coefficients, independent covariates, true
variance 1. Prints one estimate per seed and the share inside [0.8, 1.25].
"""

import argparse

import numpy as np

from mirrorfdr.datagen import BetaScheme, BetaSpec, CovarianceSpec, CovFamily, make_dataset
from mirrorfdr.fitters import estimate_sigma2


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--p1", type=int, default=50)
    ap.add_argument("--rho", type=float, default=0.0)
    args = ap.parse_args(argv)
    cov = CovarianceSpec(CovFamily.TOEPLITZ_BLOCK, args.rho)
    betas = BetaSpec(BetaScheme.FIXED_POOL, p1=args.p1)
    est = []
    for seed in range(args.seeds):
        ds = make_dataset(800, 2000, cov, betas, 1.0, 1000 + seed)
        est.append(estimate_sigma2(ds.X, ds.y, seed=seed))
        print(f"seed {seed:3d}  sigma2_hat {est[-1]:.4f}", flush=True)
    est = np.array(est)
    inside = np.mean((est >= 0.8) & (est <= 1.25))
    print(f"mean {est.mean():.4f}  sd {est.std(ddof=1):.4f}  inside [0.8, 1.25]: {inside:.0%}")


if __name__ == "__main__":
    run()
