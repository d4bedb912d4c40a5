#!/usr/bin/env python3
"""Population tau-profile of setting S2 next to its simulated rejection rates.

In S2 the conditional quantile events reduce to ``{U > tau}`` and ``{V > tau}``
on the copula uniforms, so the population QuACC is a mixture of the flipped
Clayton value (Z2 = 1) and the independence value (Z2 = 0). The expected
z-statistic under the null variance shows where the test is most powerful.
"""
import argparse
import math

import numpy as np

from quacc.estimator import null_value
from quacc.experiments import RejectionConfig, rejection_rates, run_rejection_grid
from quacc.synth import clayton_cdf


def population_rho(tau: float, theta: float) -> float:
    t = 1.0 - tau if tau >= 0.5 else tau
    if tau >= 0.5:
        # P(U > tau, V > tau) for the survival copula is C(1 - tau, 1 - tau)
        on = clayton_cdf(1.0 - tau, 1.0 - tau, theta)
    else:
        on = 2.0 * tau - 1.0 + clayton_cdf(1.0 - tau, 1.0 - tau, theta)
    return 0.5 * on + 0.5 * t * t


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--replicates", type=int, default=0, help="also simulate rejection rates")
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    taus = np.round(np.arange(0.1, 0.91, 0.05), 2)
    rates = {}
    if args.replicates:
        cfg = RejectionConfig("S2", args.n, (args.theta,), tuple(taus), args.replicates, seed=args.seed)
        rates = dict(next(iter(rejection_rates(run_rejection_grid(cfg), "tau").values())))
    print(f"{'tau':>5} {'rho':>8} {'null':>8} {'excess':>8} {'E[z]':>6} {'rate':>6}")
    for tau in taus:
        t = min(tau, 1 - tau)
        rho = population_rho(tau, args.theta)
        ez = math.sqrt(args.n) * (rho - null_value(tau)) / (t * (1 - t))
        rate = f"{rates[tau]:.2f}" if tau in rates else "-"
        print(f"{tau:5.2f} {rho:8.4f} {null_value(tau):8.4f} {rho - null_value(tau):8.4f} {ez:6.2f} {rate:>6}")


if __name__ == "__main__":
    main()
