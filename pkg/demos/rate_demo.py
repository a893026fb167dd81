"""Mean-square and pathwise rates of diffusion Robbins-Monro.

Prints dyadic-window maxima of k^beta E|err_k|^2 (flat or falling means the
k^-beta rate holds) next to the explicit bound M/(sc), then checks one long
trajectory against the k^-0.2 almost-sure rate.

    python3 demos/rate_demo.py
"""

import numpy as np

from adaptive_diffusion import analysis
from adaptive_diffusion.diffusion import GainPolicy
from adaptive_diffusion.model import RegressionProblem, check_a3, make_noise, make_regressors
from adaptive_diffusion.topology import build_standard_topology, spectral_constant_s

BETA, C, H = 0.75, 0.2, 2


def main():
    top = build_standard_topology("complete_uniform", 4)
    reg = make_regressors("one_hot_rotating", 4, 2)
    noise = make_noise("independent_bounded", 4, 1.0, distribution="uniform")
    print("excitation condition holds:", check_a3(reg, 10_000, H, 0.0, C).verdict)
    prob = RegressionProblem(np.array([1.0, -1.0]), reg, noise)
    est = analysis.monte_carlo(prob, top, GainPolicy.robbins_monro(BETA), 10_000, 200, theta0=[0.0, 0.0])
    windows = analysis.scaled_tail_windows(est, BETA, 1000, 10_000)
    s = spectral_constant_s(top, H).s_symmetric
    for (lo, hi), value in zip(windows.windows, windows.maxima):
        print(f"  k in [{lo:>5}, {hi:>5}): max k^beta E|err|^2 = {value:.4f}")
    print(f"bound M/(sc) = {noise.bound_M / (s * C):.4g} with s = {s:.3g}")

    wide = RegressionProblem(np.ones(6), make_regressors("one_hot_rotating", 4, 6),
                             make_noise("gaussian_multivariate", 4, 1.0))
    record = analysis.simulate_trajectory(wide, top, GainPolicy.robbins_monro(BETA), 200_000,
                                          theta0=np.zeros(6), record_information=False)
    rep = analysis.as_rate_check(record, 0.2)
    print("pathwise k^0.2 |err|^2 maxima over the last dyadic windows:", np.round(rep.maxima, 5),
          "->", "decreasing" if rep.passed else "not decreasing")


if __name__ == "__main__":
    main()
