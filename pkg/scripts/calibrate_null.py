#!/usr/bin/env python3
"""Type-I calibration of the QuACC test on fully independent Gaussian data.

Prints, per tau, the rejection rate, the mean and sd of z, the KS p-value of
z against N(0, 1), and the number of distinct z values (the statistic is a
lattice when few joint exceedances are expected).
"""
import argparse
import time

import numpy as np
from scipy.stats import kstest

from quacc.dataset import Dataset
from quacc.estimator import quacc_test


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--replicates", type=int, default=500)
    ap.add_argument("--taus", default="0.1,0.5,0.9")
    ap.add_argument("--n-cond", type=int, default=2, help="number of independent conditioning columns")
    ap.add_argument("--seed", type=int, default=10_000)
    args = ap.parse_args()

    names = ("Y", "X", *(f"Z{i + 1}" for i in range(args.n_cond)))
    for tau in (float(t) for t in args.taus.split(",")):
        t0 = time.perf_counter()
        zs, rej = [], 0
        for r in range(args.replicates):
            v = np.random.default_rng(args.seed + r).normal(size=(args.n, len(names)))
            res = quacc_test(Dataset(names, v), "Y", "X", names[2:], tau, 5, r)
            zs.append(res.z)
            rej += res.rejected
        zs = np.asarray(zs)
        print(
            f"tau={tau:g} rate={rej / args.replicates:.3f} z mean={zs.mean():+.3f} sd={zs.std(ddof=1):.3f} "
            f"KS p={kstest(zs, 'norm').pvalue:.3g} distinct={np.unique(np.round(zs, 9)).size} "
            f"({time.perf_counter() - t0:.0f}s)"
        )


if __name__ == "__main__":
    main()
