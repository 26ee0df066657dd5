"""Simulate points near a plane in R^10, fit the sampler, and compare estimates.

Run with ``python3 demos/recover_subspace.py``; it takes well under a minute.
"""

import numpy as np

from bnpsubspace.experiments import StudyConfig, gen_subspace_mixture
from bnpsubspace.geometry import estimate_subspace_L1, estimate_subspace_L2, l2_estimate_subspace, \
    principal_angles
from bnpsubspace.model import PriorConfig
from bnpsubspace.sampler import ChainSettings, run_chain


def main():
    cfg = StudyConfig(m=10, k_true=2, n_train=200, sigma2=0.05)
    data = gen_subspace_mixture(cfg, np.random.default_rng(0))
    truth = data.truth.subspace

    draws = run_chain(data.x, PriorConfig.default(cfg.m, 4),
                      ChainSettings(iterations=1500, burn_in=750, thin=5, mode="density-unknown-k", seed=1))
    print("posterior of k:", dict(zip(*(a.tolist() for a in np.unique(draws.k_values(), return_counts=True)))))

    r_hat, theta_hat, k1 = estimate_subspace_L1(*draws.projections())
    u_hat = np.linalg.eigh(r_hat)[1][:, -k1:] if k1 else np.zeros((cfg.m, 0))
    print(f"L1 estimate: k={k1}, largest angle to truth {principal_angles(u_hat, truth.basis).max():.3f} rad,"
          f" origin error {np.linalg.norm(theta_hat - truth.origin):.3f}")

    u1, w_hat, k2 = estimate_subspace_L2(*draws.l2_frames())
    s2 = l2_estimate_subspace(u1, w_hat)
    print(f"L2 estimate: k={k2}, largest angle to truth {principal_angles(s2.basis, truth.basis).max():.3f} rad,"
          f" origin error {np.linalg.norm(s2.origin - truth.origin):.3f}")


if __name__ == "__main__":
    main()
