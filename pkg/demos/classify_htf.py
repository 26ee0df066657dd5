"""Subspace classifier against the two baselines on the two-class mixture-of-ten design.

Run with ``python3 demos/classify_htf.py``.
"""

from bnpsubspace.experiments import StudyConfig, run_classification_study, summarize
from bnpsubspace.sampler import ChainSettings


def main():
    cfg = StudyConfig(m=6, k_true=1, n_train=200, n_test=400, replicates=2, scenario="htf", seed=3)
    settings = ChainSettings(iterations=600, burn_in=300, thin=3, mode="classifier-fixed-k", fixed_k=2)
    rows = run_classification_study(cfg, settings=settings, psc_k=2)
    for (_, _, method, _), err in sorted(summarize(rows).items(), key=lambda kv: kv[1]):
        print(f"{method:>13s}: mean misclassification {err:.3f}")


if __name__ == "__main__":
    main()
