"""Adversarial regressors that make diffusion RLS diverge in the mean.

Builds a schedule on the complete 3-node graph, re-verifies it with the
independent exact verifier, and runs a noisy Monte Carlo along it.

    python3 demos/divergence_demo.py [blocks]
"""

import sys

import numpy as np

from adaptive_diffusion import analysis
from adaptive_diffusion.adversary import SearchParams, build_divergent_schedule, exact_checkpoint_values, verify_dd
from adaptive_diffusion.topology import build_standard_topology


def main(blocks=3):
    top = build_standard_topology("complete_uniform", 3)
    schedule = build_divergent_schedule(top, 2, [1.0, 0, 0, 0, 0, 0], blocks, SearchParams(seed=0))
    report = verify_dd(schedule)
    values = exact_checkpoint_values(schedule)
    print(f"{schedule.phis.shape[0]} steps, pivot node {schedule.j_star}, target node {schedule.target_node}")
    print(f"{'t':>4} {'|R_t[target]|':>14} {'20(t+1)^4':>12} {'largest |phi|':>14}")
    for t in schedule.checkpoints:
        print(f"{t:>4} {abs(values[t][schedule.target_node * 2]):>14.4g} {20 * (t + 1) ** 4:>12.4g} "
              f"{np.abs(schedule.phis[:t + 1]).max():>14.4g}")
    print(f"verifier verdict: {report['verdict']}")
    mc = analysis.schedule_monte_carlo(schedule, 500, seed=0)
    print(f"noisy trajectories with a growing running maximum: {mc.fraction_increasing:.0%}")
    print("median |err| at checkpoints:", np.round(np.median(mc.checkpoint_norms, axis=0), 3))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
