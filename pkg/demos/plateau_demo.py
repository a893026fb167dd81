"""Finite information: diffusion RLS stalls at a positive error plateau.

Regressors decay like 2^-k, so each node collects a bounded amount of
information.  The limit product gives the noise-free plateau; the exact
second-moment propagation adds the noise contribution on top of it, and the
Monte Carlo estimate tracks the exact value for every noise level.

    python3 demos/plateau_demo.py
"""

import numpy as np

from adaptive_diffusion import analysis
from adaptive_diffusion.diffusion import GainPolicy
from adaptive_diffusion.model import RegressionProblem, make_noise, make_regressors
from adaptive_diffusion.topology import build_standard_topology

N, HORIZON, TRIALS = 4, 200, 2000


def main():
    top = build_standard_topology("ring_self_loops", N)
    reg = make_regressors("geometric", N, 1, scale=1.0, ratio=0.5)
    phis = reg.block(0, HORIZON)[0]
    err0 = np.full(N, -1.0)
    limit = analysis.limit_product_pi(top, phis, err0)
    print(f"mu = {np.round(limit.mu, 6)} (sum {limit.mu.sum():.6f})")
    print(f"noise-free plateau n (sum mu_j err0_j)^2 = {limit.plateau:.6f}\n")
    print(f"{'noise var':>10} {'exact E|err|^2':>15} {'Monte Carlo':>12} {'std err':>9} {'MC - plateau':>13}")
    for variance in (0.0, 0.0025, 0.25, 1.0):
        prob = RegressionProblem(np.array([1.0]), reg, make_noise("gaussian_multivariate", N, variance))
        est = analysis.monte_carlo(prob, top, GainPolicy.rls(), HORIZON, TRIALS, theta0=[0.0])
        exact = analysis.exact_second_moment_scalar(top, phis, err0, variance * np.eye(N))[HORIZON]
        mc = est.mean_err_sq[HORIZON]
        print(f"{variance:>10} {exact:>15.6f} {mc:>12.6f} {est.std_err[HORIZON]:>9.1e} {mc - limit.plateau:>13.6f}")


if __name__ == "__main__":
    main()
