"""Synthetic study designs, baselines and evaluation metrics.

Two generators are provided.  ``psc-mixture`` draws from an equal-weight
mixture of ``k+1`` isotropic Gaussians centred at the first ``k+1``
coordinate axes, so the centres span a ``k``-dimensional affine subspace;
class labels, when requested, are drawn from the true coordinate-mixture
weights.  ``htf`` draws two classes, each an equal mixture of ten
Gaussians with means scattered around ``e_1`` or ``e_2``.

Study results are lists of row dicts with the fields of ``RESULT_FIELDS``.
"""

from dataclasses import dataclass, replace
import csv
import io

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidDimensionError
from .geometry import AffineSubspace
from .model import PriorConfig, classify_posterior_predictive, log_density
from .sampler import ChainSettings, run_chain

SCENARIOS = ("psc-mixture", "htf")
RESULT_FIELDS = ("scenario", "m", "k_true", "sigma2", "n", "method", "metric", "value", "seed")
HTF_VARIANCE = 0.2
HTF_COMPONENTS = 10


@dataclass(frozen=True)
class StudyConfig:
    """Size and scenario of a simulation study (desk-scale defaults)."""

    m: int = 20
    k_true: int = 2
    n_train: int = 200
    n_test: int = 100
    sigma2: float = 0.1
    replicates: int = 5
    scenario: str = "psc-mixture"
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if min(self.m, self.n_train, self.n_test, self.replicates) < 1:
            raise ValueError("m, n_train, n_test and replicates must be positive")
        if self.scenario == "psc-mixture" and not 0 <= self.k_true < self.m:
            raise InvalidDimensionError(f"k_true={self.k_true} must satisfy 0 <= k_true < m={self.m}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass
class GroundTruth:
    """Generating mixture: equal-weight ``N(centers[h], variance I)`` components."""

    centers: np.ndarray
    variance: float
    subspace: AffineSubspace = None
    component_class: np.ndarray = None

    @property
    def k(self):
        return None if self.subspace is None else self.subspace.dim

    def log_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = self.centers.shape[1]
        d2 = ((x[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        logk = -0.5 * (m * np.log(2 * np.pi * self.variance) + d2 / self.variance)
        return logsumexp(logk, axis=1) - np.log(self.centers.shape[0])

    def coordinate_weights(self, x):
        """Posterior component probabilities given the subspace coordinates."""
        u = self.subspace.basis
        z = np.atleast_2d(x) @ u
        mu = self.centers @ u
        lw = -0.5 * ((z[:, None, :] - mu[None]) ** 2).sum(axis=-1) / self.variance
        lw -= logsumexp(lw, axis=1, keepdims=True)
        return np.exp(lw)


@dataclass
class Dataset:
    """Observations (n, m) with optional class labels in 1..c and the generating truth."""

    x: np.ndarray
    y: np.ndarray = None
    truth: GroundTruth = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.x.shape[1]


def true_subspace(m, k):
    """Affine span of the first ``k+1`` coordinate axes.

    Basis columns are normalized Helmert contrasts
    ``(1, ..., 1, -j, 0, ...) / sqrt(j (j+1))``; the origin is the centroid
    ``(1/(k+1), ..., 1/(k+1), 0, ...)``.
    """
    if not 0 <= k < m:
        raise InvalidDimensionError(f"need 0 <= k < m, got k={k}, m={m}")
    u = np.zeros((m, k))
    for j in range(1, k + 1):
        u[:j, j - 1] = 1.0
        u[j, j - 1] = -float(j)
        u[:, j - 1] /= np.sqrt(j * (j + 1.0))
    theta = np.zeros(m)
    theta[:k + 1] = 1.0 / (k + 1)
    return AffineSubspace(u, theta)


def gen_subspace_mixture(cfg, rng, n=None, classify=False):
    """Draw ``n`` (default ``cfg.n_train``) points from the axis-centred mixture."""
    if cfg.scenario != "psc-mixture":
        raise ValueError("gen_subspace_mixture needs the psc-mixture scenario")
    m, k = cfg.m, cfg.k_true
    if k + 1 > m:
        raise InvalidDimensionError("k+1 components do not fit in R^m")
    n = cfg.n_train if n is None else int(n)
    centers = np.eye(m)[:k + 1]
    truth = GroundTruth(centers, cfg.sigma2, true_subspace(m, k), np.arange(1, k + 2))
    comp = rng.integers(0, k + 1, size=n)
    x = centers[comp] + np.sqrt(cfg.sigma2) * rng.standard_normal((n, m))
    y = None
    if classify:
        p = truth.coordinate_weights(x)
        u = rng.random(n)
        y = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), k) + 1
    return Dataset(x, y, truth)


def gen_htf(cfg, rng, n=None, truth=None):
    """Two-class data; ``n`` (default ``cfg.n_train // 2``) points per class.

    Pass the ``truth`` of a training set to draw a test set from the same
    component means.
    """
    if cfg.scenario != "htf":
        raise ValueError("gen_htf needs the htf scenario")
    m = cfg.m
    if m < 2:
        raise InvalidDimensionError("htf scenario needs m >= 2")
    n = max(1, cfg.n_train // 2) if n is None else int(n)
    if truth is None:
        eta = np.eye(m)[:2]
        centers = np.concatenate([eta[c] + rng.standard_normal((HTF_COMPONENTS, m)) for c in range(2)])
        truth = GroundTruth(centers, HTF_VARIANCE, None, np.repeat([1, 2], HTF_COMPONENTS))
    xs, ys = [], []
    for c in (1, 2):
        idx = np.flatnonzero(truth.component_class == c)
        comp = rng.choice(idx, size=n)
        xs.append(truth.centers[comp] + np.sqrt(truth.variance) * rng.standard_normal((n, m)))
        ys.append(np.full(n, c))
    return Dataset(np.concatenate(xs), np.concatenate(ys), truth)


# ---------------------------------------------------------------------------
# metrics and baselines
# ---------------------------------------------------------------------------

def kl_type_distance(true_logdensity, draws, test_sets):
    """Average log-density shortfall of the fitted densities on held-out points.

    ``(1/D) sum_d (1/T) sum_t sum_l [log f0(x_ld) - log fhat_t(x_ld)]``.

    Parameters
    ----------
    true_logdensity : callable or sequence of D callables
        Vectorized log-density of the generating distribution.
    draws : PosteriorDraws / sequence of ModelParams, or a sequence of D of them
        Fitted states; one collection per test set, or one shared by all.
    test_sets : sequence of D arrays, shape (n_d, m)
    """
    test_sets = [np.atleast_2d(np.asarray(t, dtype=float)) for t in test_sets]
    n_sets = len(test_sets)
    if n_sets == 0 or any(t.shape[0] == 0 for t in test_sets):
        raise ValueError("test sets must be nonempty")
    f0s = list(true_logdensity) if isinstance(true_logdensity, (list, tuple)) else [true_logdensity] * n_sets
    per_set = _per_set_draws(draws, n_sets)
    if len(f0s) != n_sets:
        raise ValueError("need one true log-density per test set")
    total = 0.0
    for f0, states, pts in zip(f0s, per_set, test_sets):
        if len(states) == 0:
            raise ValueError("no posterior draws supplied")
        l0 = np.asarray(f0(pts), dtype=float)
        _check_finite(l0, pts, "true")
        s0 = float(np.sum(l0))
        acc = 0.0
        for st in states:
            lf = log_density(pts, st)
            _check_finite(lf, pts, "fitted")
            acc += s0 - float(np.sum(lf))
        total += acc / len(states)
    return total / n_sets


def _per_set_draws(draws, n_sets):
    states = getattr(draws, "draws", draws)
    if len(states) and hasattr(states[0], "k") and hasattr(states[0], "atoms"):
        return [states] * n_sets
    out = [getattr(d, "draws", d) for d in states]
    if len(out) != n_sets:
        raise ValueError("need one draw collection per test set")
    return out


def _check_finite(values, pts, which):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise FloatingPointError(f"non-finite {which} log-density at test point {i}: {pts[i].tolist()}")


def misclassification_rate(predicted, actual):
    predicted = np.asarray(predicted).ravel()
    actual = np.asarray(actual).ravel()
    if predicted.size != actual.size:
        raise ValueError(f"length mismatch: {predicted.size} predictions, {actual.size} labels")
    if actual.size == 0:
        return 0.0
    return float(np.mean(predicted != actual))


def nearest_mean_classifier(x_train, y_train, x_test):
    """Assign each test row to the class with the nearest training mean."""
    y_train = np.asarray(y_train, dtype=int)
    classes = np.unique(y_train)
    means = np.array([x_train[y_train == c].mean(axis=0) for c in classes])
    d2 = ((np.atleast_2d(x_test)[:, None, :] - means[None]) ** 2).sum(axis=-1)
    return classes[np.argmin(d2, axis=1)]


def knn_classifier(x_train, y_train, x_test, n_neighbors):
    """Majority vote among the ``n_neighbors`` nearest training rows.

    Vote ties go to the class containing the nearest tied neighbour.
    """
    y_train = np.asarray(y_train, dtype=int)
    x_test = np.atleast_2d(x_test)
    kn = min(int(n_neighbors), y_train.size)
    d2 = ((x_test[:, None, :] - x_train[None]) ** 2).sum(axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")[:, :kn]
    out = np.empty(x_test.shape[0], dtype=int)
    for i, nb in enumerate(order):
        labs = y_train[nb]
        vals, counts = np.unique(labs, return_counts=True)
        tied = vals[counts == counts.max()]
        out[i] = next(l for l in labs if l in tied)
    return out


# ---------------------------------------------------------------------------
# study harness
# ---------------------------------------------------------------------------

def sized_prior(prior, m, k_max, n_classes=None):
    """Copy of ``prior`` with its base measure resized to ``k_max`` coordinates.

    Leading blocks are kept; missing coordinates get mean 0 and the last
    diagonal variance (1 when the template has none).  The prior on ``k``
    becomes uniform over ``1..k_max`` unless the template already has the
    right length.
    """
    if prior is None:
        return PriorConfig.default(m, k_max, n_classes=n_classes)
    kk = prior.base_mean.size
    mean = np.zeros(k_max)
    cov = np.eye(k_max) * (prior.base_cov[-1, -1] if kk else 1.0)
    keep = min(kk, k_max)
    mean[:keep] = prior.base_mean[:keep]
    cov[:keep, :keep] = prior.base_cov[:keep, :keep]
    k_prior = prior.k_prior if prior.k_prior.size == k_max + 1 else (
        np.r_[0.0, np.full(k_max, 1.0 / k_max)] if k_max else np.ones(1))
    dirichlet = prior.base_dirichlet
    if n_classes is not None and (dirichlet is None or dirichlet.size != n_classes):
        dirichlet = np.ones(n_classes)
    return replace(prior, base_mean=mean, base_cov=cov, k_prior=k_prior,
                   base_dirichlet=dirichlet)


def _replicate_seeds(cfg):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)]


def _row(cfg, method, metric, value, seed):
    return dict(scenario=cfg.scenario, m=cfg.m, k_true=cfg.k_true, sigma2=cfg.sigma2,
                n=cfg.n_train, method=method, metric=metric, value=float(value), seed=seed)


def density_methods(cfg, include_unknown=True):
    """Default method list: wrong and correct fixed k, full dimension, unknown k."""
    methods = []
    if cfg.k_true > 1:
        methods.append(cfg.k_true - 1)
    methods.append(cfg.k_true)
    methods.append(cfg.m)
    if include_unknown:
        methods.append("unknown")
    return methods


def _method_name(method):
    return "unknown-k" if method == "unknown" else f"k={method}"


def fit_density(x, method, prior, settings, seed):
    """Run one density chain for ``method`` (an int k, or ``"unknown"``)."""
    m = x.shape[1]
    if method == "unknown":
        k_max = prior.k_max if prior is not None and 0 < prior.k_max < m else min(5, m - 1)
        pr = sized_prior(prior, m, k_max)
        st = replace(settings, mode="density-unknown-k", fixed_k=None, seed=seed)
    else:
        pr = sized_prior(prior, m, int(method))
        st = replace(settings, mode="density-fixed-k", fixed_k=int(method), seed=seed)
    return run_chain(x, pr, st)


def run_density_study(cfg, prior=None, settings=None, methods=None):
    """Fit every method on each replicate and score it on fresh test points.

    ``prior`` is a template resized per method (see ``sized_prior``); by
    default the library default prior is used.  Returns one row per
    (replicate, method) with metric ``kl``.
    """
    settings = settings or ChainSettings(mode="density-fixed-k", fixed_k=cfg.k_true)
    methods = density_methods(cfg) if methods is None else list(methods)
    rows = []
    for seed in _replicate_seeds(cfg):
        rng = np.random.default_rng(seed)
        train = gen_subspace_mixture(cfg, rng)
        test = gen_subspace_mixture(cfg, rng, n=cfg.n_test)
        for method in methods:
            draws = fit_density(train.x, method, prior, settings, seed)
            kl = kl_type_distance(train.truth.log_density, draws, [test.x])
            rows.append(_row(cfg, _method_name(method), "kl", kl, seed))
    return rows


def psc_predict(train, x_test, k, prior, settings, seed):
    """Fit the principal subspace classifier and return modal test classes."""
    n_classes = int(np.max(train.y))
    pr = sized_prior(prior, train.m, k, n_classes=n_classes)
    st = replace(settings, mode="classifier-fixed-k", fixed_k=k, seed=seed)
    draws = run_chain(train.x, pr, st, y=train.y)
    _, labels = classify_posterior_predictive(x_test, draws)
    return np.atleast_1d(labels)


def run_classification_study(cfg, prior=None, settings=None, psc_k=None, knn_neighbors=None):
    """Misclassification of the PSC, nearest-class-mean and KNN baselines.

    Rows have metric ``misclassification`` and methods ``psc``,
    ``nearest-mean`` and ``knn``.
    """
    psc_k = cfg.k_true if psc_k is None else int(psc_k)
    if knn_neighbors is None:
        knn_neighbors = 6 if cfg.scenario == "psc-mixture" else 25
    settings = settings or ChainSettings(mode="classifier-fixed-k", fixed_k=psc_k)
    rows = []
    for seed in _replicate_seeds(cfg):
        rng = np.random.default_rng(seed)
        if cfg.scenario == "psc-mixture":
            train = gen_subspace_mixture(cfg, rng, classify=True)
            test = gen_subspace_mixture(cfg, rng, n=cfg.n_test, classify=True)
        else:
            train = gen_htf(cfg, rng)
            test = gen_htf(cfg, rng, n=max(1, cfg.n_test // 2), truth=train.truth)
        preds = {
            "psc": psc_predict(train, test.x, psc_k, prior, settings, seed),
            "nearest-mean": nearest_mean_classifier(train.x, train.y, test.x),
            "knn": knn_classifier(train.x, train.y, test.x, knn_neighbors),
        }
        for name, pred in preds.items():
            rows.append(_row(cfg, name, "misclassification", misclassification_rate(pred, test.y), seed))
    return rows


def rows_to_csv(rows, stream=None):
    """Write result rows as CSV with the fixed header; returns the text if no stream."""
    out = stream if stream is not None else io.StringIO()
    w = csv.DictWriter(out, fieldnames=RESULT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": repr(float(r["value"])), "sigma2": repr(float(r["sigma2"]))})
    return out.getvalue() if stream is None else None


def summarize(rows):
    """Mean value per (sigma2, n, method, metric)."""
    acc = {}
    for r in rows:
        key = (r["sigma2"], r["n"], r["method"], r["metric"])
        acc.setdefault(key, []).append(r["value"])
    return {key: float(np.mean(v)) for key, v in acc.items()}
