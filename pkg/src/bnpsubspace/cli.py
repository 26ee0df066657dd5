"""Command-line interface.

Subcommands: fit, predict, simulate, study, estimate, validate-prior.
Exit status is 0 on success, 2 for bad input and 3 when a numerical
invariant fails during computation.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import (InvalidDimensionError, InvariantViolationError,
                     NonUniqueMinimizerError, SubspaceError)
from .experiments import (gen_htf, gen_subspace_mixture, rows_to_csv,
                          run_classification_study, run_density_study)
from .geometry import estimate_subspace_L1, estimate_subspace_L2
from .io import (InputError, load_config, prior_from_config, read_csv,
                 read_draws, settings_from_config, study_from_config,
                 write_csv, write_draws)
from .model import classify_posterior_predictive, validate_consistency_prior
from .sampler import PosteriorDraws, run_chain

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

log = logging.getLogger("bnpsubspace")


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def _estimates(states):
    out = {}
    if not states:
        return out
    rs = np.array([s.active_basis @ s.active_basis.T for s in states])
    ths = np.array([s.origin for s in states])
    try:
        r_hat, theta_hat, k_hat = estimate_subspace_L1(rs, ths)
        out["L1"] = {"k": k_hat, "projection": r_hat.tolist(), "origin": theta_hat.tolist()}
    except NonUniqueMinimizerError as exc:
        out["L1"] = {"error": str(exc)}
    draws = PosteriorDraws(list(states), None)
    frames, norms = draws.l2_frames()
    try:
        u1, w_hat, k_hat = estimate_subspace_L2(frames, norms)
        out["L2"] = {"k": k_hat, "basis": u1[:, :k_hat].tolist(),
                     "origin": (w_hat * u1[:, k_hat]).tolist(), "origin_norm": w_hat}
    except NonUniqueMinimizerError as exc:
        out["L2"] = {"error": str(exc)}
    return out


def summarize_states(states, trace=None):
    """Posterior summaries plus both subspace estimates (JSON-ready)."""
    ks = np.array([s.k for s in states], dtype=float)
    sig = np.array([s.sigma for s in states])
    out = {"n_draws": len(states)}
    if len(states):
        out["k"] = {"mean": float(ks.mean()), "median": float(np.median(ks)),
                    "counts": {str(int(v)): int(c) for v, c in zip(*np.unique(ks, return_counts=True))}}
        out["sigma"] = {"mean": float(sig.mean()), "median": float(np.median(sig))}
    out["estimates"] = _estimates(states)
    if trace is not None:
        out["trace"] = {name: np.asarray(trace[name]).tolist()
                        for name in ("k", "sigma", "loglik") if name in trace}
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _report_prior(prior, m):
    if prior.consistency_exponents is None:
        print("validate-prior: no consistency exponents configured; nothing to check")
        return
    bad = validate_consistency_prior(prior, m)
    if not bad:
        print("validate-prior: all sufficient conditions hold")
    for v in bad:
        print(f"warning: prior condition {v}")


def _fit_one(job):
    x, y, prior, settings = job
    return run_chain(x, prior, settings, y=y)


def cmd_fit(args):
    classify = args.mode == "classify"
    x, y = read_csv(args.input, label_column=classify)
    n, m = x.shape
    if n == 0:
        raise InputError(f"{args.input}: no data rows")
    cp = load_config(args.config)
    n_classes = int(y.max()) if classify else None
    if args.fixed_k is not None:
        k_max = args.fixed_k
        mode = ("classifier" if classify else "density") + "-fixed-k"
    else:
        k_max = args.max_k if args.max_k is not None else min(5, m - 1)
        mode = ("classifier" if classify else "density") + "-unknown-k"
    if k_max < 0 or k_max > m:
        raise InputError(f"dimension {k_max} outside 0..{m}")
    prior = prior_from_config(cp, m, k_max, n_classes)
    settings = settings_from_config(
        cp, iterations=args.iterations, burn_in=args.burn_in, thin=args.thin,
        seed=args.seed, mode=mode, fixed_k=args.fixed_k)
    if args.validate_prior:
        _report_prior(prior, m)

    chains = max(1, args.chains)
    if chains == 1:
        seeds = [settings.seed]
    else:
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(settings.seed).spawn(chains)]
    jobs = [(x, y, prior, replace(settings, seed=s)) for s in seeds]
    if chains == 1:
        results = [_fit_one(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=chains) as pool:
            results = list(pool.map(_fit_one, jobs))
    for i, draws in enumerate(results):
        stem = args.output if chains == 1 else f"{args.output}.chain{i + 1}"
        write_draws(f"{stem}.draws.jsonl", draws, m)
        _write_json(f"{stem}.summary.json", summarize_states(draws.draws, draws.trace))
        log.info("wrote %s.draws.jsonl (%d draws)", stem, len(draws))
    return EXIT_OK


def cmd_predict(args):
    head, states = read_draws(args.draws)
    if not states:
        raise InputError(f"{args.draws}: no stored draws")
    if states[0].atoms.class_probs is None:
        raise InputError(f"{args.draws}: draws come from a density fit, not a classifier fit")
    x, _ = read_csv(args.input, label_column=args.has_labels)
    c = states[0].atoms.class_probs.shape[1]
    if x.shape[0] and x.shape[1] != head["m"]:
        raise InputError(f"input has {x.shape[1]} feature columns, draws were fitted with m={head['m']}")
    lines = [",".join([f"p{j + 1}" for j in range(c)] + ["class"])]
    if x.shape[0]:
        probs, labels = classify_posterior_predictive(x, states)
        for p, lab in zip(probs, np.atleast_1d(labels)):
            lines.append(",".join([repr(float(v)) for v in p] + [str(int(lab))]))
    with open(args.output, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_estimate(args):
    _, states = read_draws(args.draws)
    if not states:
        raise InputError(f"{args.draws}: no stored draws")
    summary = summarize_states(states)
    if args.output:
        _write_json(args.output, summary)
    else:
        json.dump(summary["estimates"], sys.stdout, sort_keys=True, indent=1)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_simulate(args):
    cp = load_config(args.config)
    cfg = study_from_config(cp, scenario=args.scenario, m=args.m, k_true=args.k,
                            n_train=args.n, sigma2=args.sigma2, seed=args.seed)
    rng = np.random.default_rng(cfg.seed)
    if cfg.scenario == "psc-mixture":
        data = gen_subspace_mixture(cfg, rng, classify=args.classify)
    else:
        data = gen_htf(cfg, rng)
    write_csv(args.output, data.x, data.y)
    truth = {"scenario": cfg.scenario, "m": cfg.m, "variance": data.truth.variance,
             "centers": data.truth.centers.tolist()}
    if data.truth.subspace is not None:
        truth.update(k=data.truth.subspace.dim, basis=data.truth.subspace.basis.tolist(),
                     origin=data.truth.subspace.origin.tolist())
    _write_json(args.output + ".truth.json", truth)
    return EXIT_OK


def cmd_study(args):
    cp = load_config(args.config)
    cfg = study_from_config(cp, scenario=args.scenario, m=args.m, k_true=args.k,
                            n_train=args.n, n_test=args.n_test, sigma2=args.sigma2,
                            replicates=args.replicates, seed=args.seed)
    classify = args.kind == "classification"
    prior = prior_from_config(cp, cfg.m, max(cfg.k_true, 1), 3 if classify else None)
    mode = "classifier-fixed-k" if classify else "density-fixed-k"
    settings = settings_from_config(cp, iterations=args.iterations, burn_in=args.burn_in,
                                    thin=args.thin, mode=mode, fixed_k=cfg.k_true)
    if classify:
        rows = run_classification_study(cfg, prior, settings)
    else:
        methods = None
        if args.methods:
            methods = [m if m == "unknown" else int(m) for m in args.methods.split(",")]
        rows = run_density_study(cfg, prior, settings, methods)
    text = rows_to_csv(rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_prior(args):
    cp = load_config(args.config)
    prior = prior_from_config(cp, args.m, args.max_k)
    if prior.consistency_exponents is None:
        raise InputError("[prior] needs consistency = a, b, alpha, tau")
    _report_prior(prior, args.m)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _chain_flags(p):
    p.add_argument("--config", help="INI file with [prior], [chain] and [study] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="bnpsubspace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a CSV file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output prefix")
    dim = p.add_mutually_exclusive_group()
    dim.add_argument("--fixed-k", dest="fixed_k", type=int)
    dim.add_argument("--max-k", dest="max_k", type=int)
    p.add_argument("--mode", choices=("density", "classify"), default="density")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--validate-prior", dest="validate_prior", action="store_true")
    _chain_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior-predictive classes for new rows")
    p.add_argument("--draws", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--has-labels", dest="has_labels", action="store_true",
                   help="input carries a final label column to ignore")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("estimate", help="subspace point estimates from a draws file")
    p.add_argument("--draws", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="write a synthetic data set and its ground truth")
    p.add_argument("--output", required=True)
    p.add_argument("--scenario", choices=("psc-mixture", "htf"))
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--classify", action="store_true")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="run a replicated simulation study")
    p.add_argument("--kind", choices=("density", "classification"), default="density")
    p.add_argument("--output")
    p.add_argument("--scenario", choices=("psc-mixture", "htf"))
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", help="comma list of fixed k values and/or 'unknown'")
    _chain_flags(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("validate-prior", help="check the sufficient prior conditions")
    p.add_argument("--config", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--max-k", dest="max_k", type=int, default=1)
    p.set_defaults(func=cmd_validate_prior)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolationError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NonUniqueMinimizerError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, InvalidDimensionError, SubspaceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
