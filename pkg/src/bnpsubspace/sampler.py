"""Block Gibbs sampler for the subspace-coordinate Dirichlet-process mixture.

One iteration visits, in order: the basis ``U0``, the origin ``theta``,
the atom labels, the stick-breaking weights, the atom locations, the
residual precision, the coordinate precisions and (when the dimension is
sampled) ``k``.  In that case the basis and atom updates also refresh
the inactive columns and coordinates from their priors.  Classifier modes additionally update the per-atom class
probabilities.

Internally atom labels are 0-based indices into the atom arrays and class
labels are 0-based; the public ``run_chain`` accepts class labels in
``1..c``.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import stats
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .errors import (InfeasibleConstraintError, InvalidDimensionError,
                     InvariantViolationError, MisconfiguredModelError)
from .geometry import stack_l2_frame
from .manifold import (BmfParams, null_space_basis, sample_bmf_gibbs,
                       sample_uniform_stiefel,
                       sample_uniform_stiefel_orthogonal_to)
from .model import LOG_2PI, MixtureAtoms, ModelParams, log_density

log = logging.getLogger(__name__)

MODES = ("density-fixed-k", "density-unknown-k", "classifier-fixed-k", "classifier-unknown-k")
VARIANCE_FLOOR = 1e-6
INVARIANT_TOL = 1e-9


@dataclass(frozen=True)
class ChainSettings:
    """Run-length, adaptation and mode settings of one chain.

    ``adapt=None`` switches the tempering/inflation schedule on exactly for
    the unknown-k modes.  ``fixed_k`` is required by the fixed-k modes.
    """

    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    mode: str = "density-fixed-k"
    fixed_k: int = None
    adapt: bool = None
    adapt_c1: float = 1e-4
    adapt_c2: float = 100.0
    adapt_c3: float = 1e-3
    bmf_sweeps: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.iterations < 1 or self.thin < 1 or self.bmf_sweeps < 1:
            raise ValueError("iterations, thin and bmf_sweeps must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.fixed_dimension and self.fixed_k is None:
            raise ValueError(f"mode {self.mode!r} needs fixed_k")

    @property
    def fixed_dimension(self):
        return self.mode.endswith("fixed-k")

    @property
    def classifier(self):
        return self.mode.startswith("classifier")

    @property
    def adaptive(self):
        return (not self.fixed_dimension) if self.adapt is None else bool(self.adapt)

    def tempering_power(self, t):
        """Exponent applied to the dimension probabilities at iteration t."""
        if not self.adaptive:
            return 1.0
        return -math.expm1(-self.adapt_c1 * t)

    def inflation(self, t):
        """Factor multiplying the atom-location conditional covariance."""
        if not self.adaptive:
            return 1.0
        return 1.0 + self.adapt_c2 * math.exp(-self.adapt_c3 * t)

    @property
    def n_stored(self):
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass
class PosteriorDraws:
    """Stored states of one chain plus per-iteration traces.

    ``trace`` maps names to arrays of length ``iterations``: ``k``,
    ``sigma``, ``loglik``, ``frame_residual`` (``|U'U - I|_F``) and
    ``origin_residual`` (``|U'theta|``).
    """

    draws: list
    settings: ChainSettings
    trace: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.draws)

    def __iter__(self):
        return iter(self.draws)

    def __getitem__(self, i):
        return self.draws[i]

    @property
    def seed(self):
        return self.settings.seed

    def k_values(self):
        return np.array([d.k for d in self.draws], dtype=int)

    def k_mode(self):
        """Most frequent stored dimension (smallest on ties)."""
        ks = self.k_values()
        return int(np.argmax(np.bincount(ks)))

    def projections(self):
        """Per-draw (R, theta) pairs for the L1 estimator."""
        rs = np.array([d.active_basis @ d.active_basis.T for d in self.draws])
        ths = np.array([d.origin for d in self.draws])
        return rs, ths

    def l2_frames(self):
        """Per-draw (m x m frame, |theta|) pairs for the L2 estimator."""
        out = [stack_l2_frame(d.active_basis, d.origin) for d in self.draws]
        return np.array([f for f, _ in out]), np.array([w for _, w in out])

    def occupied_counts(self):
        return np.array([np.unique(d.labels).size if d.labels is not None else 0
                         for d in self.draws])


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _categorical_rows(logp, rng):
    """One categorical draw per row of unnormalized log-probabilities."""
    logp = logp - logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    c = np.cumsum(p, axis=1)
    u = rng.random(logp.shape[0]) * c[:, -1]
    idx = (c < u[:, None]).sum(axis=1)
    return np.minimum(idx, logp.shape[1] - 1)


def _counts(labels, n_atoms):
    return np.bincount(labels, minlength=n_atoms)


def _theta_direction(theta):
    nrm = np.linalg.norm(theta)
    return None if nrm == 0.0 else theta / nrm


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------

def full_conditional_U0(x, state, prior=None):
    """BMF parameters of the active basis given everything else.

    ``F1 = (sum_i x_i mu_{S_i}') Sigma0^{-1}``,
    ``F2 = (sigma^{-2} I - Sigma0^{-1}) / 2``, ``F3 = sum_i x_i x_i'``.
    Combined with a uniform prior this is the full conditional, restricted
    to frames orthogonal to ``theta``.
    """
    k, m = state.k, state.m
    s0 = state.active_sigma0
    if np.any(s0 <= 0) or not np.all(np.isfinite(1.0 / s0)):
        raise InvariantViolationError("Sigma0 is singular")
    x = np.asarray(x, dtype=float).reshape(-1, m)
    if x.shape[0]:
        mu = state.active_locations[state.labels]
        f1 = (x.T @ mu) / s0
        f3 = x.T @ x
    else:
        f1 = np.zeros((m, k))
        f3 = np.zeros((m, m))
    f2 = 0.5 * np.diag(state.sigma ** -2 - 1.0 / s0)
    return BmfParams(f1, f2, 0.5 * (f3 + f3.T))


def update_U0(x, state, prior, settings, rng):
    if state.k == 0:
        return state.basis[:, :0]
    params = full_conditional_U0(x, state, prior)
    # with k = m the origin is forced to zero and imposes no constraint
    cons = None if state.k == state.m else _theta_direction(state.origin)
    return sample_bmf_gibbs(params, state.active_basis, cons,
                            sweeps=settings.bmf_sweeps, rng=rng)


# ---------------------------------------------------------------------------
# origin
# ---------------------------------------------------------------------------

def _sigma_inverse(state):
    u = state.active_basis
    s2i = state.sigma ** -2
    return u @ np.diag(1.0 / state.active_sigma0 - s2i) @ u.T + s2i * np.eye(state.m)


def full_conditional_theta(x, state, prior):
    """Unconstrained Gaussian conditional ``(m*, S*)`` and the constraint basis W.

    ``S* = (n Sigma^{-1} + S_theta^{-1})^{-1}``,
    ``m* = S* (Sigma^{-1} sum_i x_i + S_theta^{-1} m_theta)``.  W is an
    orthonormal basis of the complement of every stored basis column.
    """
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    n = x.shape[0]
    si = _sigma_inverse(state)
    sti = np.linalg.inv(prior.theta_cov)
    prec = n * si + sti
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (si @ x.sum(axis=0) + sti @ prior.theta_mean)
    w = null_space_basis(state.basis, state.m)
    return mean, cov, w


def sample_theta(x, state, prior, rng):
    """Draw ``theta = W z`` from the Gaussian conditional restricted to span(W).

    The restricted conditional has precision ``W' (n Sigma^{-1} + S_theta^{-1}) W``
    and linear term ``W' (Sigma^{-1} sum x_i + S_theta^{-1} m_theta)``; for
    isotropic ``S_theta`` this coincides with ``N(W'm*, W'S*W)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    w = null_space_basis(state.basis, state.m)
    if w.shape[1] == 0:
        return np.zeros(state.m)
    si = _sigma_inverse(state)
    sti = np.linalg.inv(prior.theta_cov)
    prec = w.T @ (x.shape[0] * si + sti) @ w
    h = w.T @ (si @ x.sum(axis=0) + sti @ prior.theta_mean)
    chol = np.linalg.cholesky(0.5 * (prec + prec.T))
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, h))
    z = mean + np.linalg.solve(chol.T, rng.standard_normal(w.shape[1]))
    theta = w @ z
    # remove round-off leakage into the basis span
    return theta - state.basis @ (state.basis.T @ theta)


# ---------------------------------------------------------------------------
# mixture: labels, sticks, atoms, class probabilities
# ---------------------------------------------------------------------------

def label_log_weights(x, state, y=None):
    """Unnormalized log-probabilities of each atom label, shape (n, N)."""
    k = state.k
    z = x @ state.active_basis
    mu = state.active_locations
    s0 = state.active_sigma0
    with np.errstate(divide="ignore"):
        lw = np.tile(np.log(state.atoms.weights), (x.shape[0], 1))
        for j in range(k):
            lw -= 0.5 * (z[:, j:j + 1] - mu[None, :, j]) ** 2 / s0[j]
        if y is not None:
            lw += np.log(state.atoms.class_probs[:, y]).T
    return lw


def update_labels(x, state, rng, y=None):
    """Draw every label from its categorical conditional (log space)."""
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return _categorical_rows(label_log_weights(x, state, y), rng)


def stick_parameters(labels, n_atoms, w0):
    """Beta parameters of the first N-1 sticks given labels."""
    counts = _counts(labels, n_atoms).astype(float)
    tail = np.cumsum(counts[::-1])[::-1]
    after = np.r_[tail[1:], 0.0]
    return 1.0 + counts[:-1], w0 + after[:-1]


def update_weights(labels, n_atoms, prior, rng):
    """Stick-breaking weights with the last stick closing the simplex."""
    if n_atoms == 1:
        return np.ones(1)
    a, b = stick_parameters(np.asarray(labels, dtype=int), n_atoms, prior.dp_concentration)
    v = np.r_[rng.beta(a, b), 1.0]
    remaining = np.r_[1.0, np.cumprod(1.0 - v[:-1])]
    w = v * remaining
    return w / w.sum()


def atom_conditional(z_sum, n_j, s0, mean0, cov0):
    """Gaussian conditional of one atom's active coordinates."""
    p0 = np.linalg.inv(cov0)
    prec = n_j * np.diag(1.0 / s0) + p0
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (z_sum / s0 + p0 @ mean0)
    return mean, cov


def update_atoms(x, state, prior, settings, t, rng):
    """Draw all atom locations; inactive coordinates come from the base."""
    k = state.k
    n_atoms = state.atoms.n_atoms
    kk = state.atoms.locations.shape[1]
    out = np.empty((n_atoms, kk))
    m0, c0 = prior.base_mean[:kk], prior.base_cov[:kk, :kk]
    infl = settings.inflation(t)
    if k:
        z = x @ state.active_basis
        labels = state.labels if x.shape[0] else np.zeros(0, dtype=int)
        counts = _counts(labels, n_atoms)
        sums = np.zeros((n_atoms, k))
        np.add.at(sums, labels, z)
        s0 = state.active_sigma0
        for j in range(n_atoms):
            mean, cov = atom_conditional(sums[j], counts[j], s0, m0[:k], c0[:k, :k])
            out[j, :k] = rng.multivariate_normal(mean, infl * cov, method="cholesky")
    if k < kk:
        # base conditional of the inactive block given the active one
        if k:
            a = c0[k:, :k] @ np.linalg.inv(c0[:k, :k])
            cond_cov = c0[k:, k:] - a @ c0[:k, k:]
            cond_mean = m0[k:][None, :] + (out[:, :k] - m0[:k]) @ a.T
        else:
            cond_cov, cond_mean = c0, np.tile(m0, (n_atoms, 1))
        chol = np.linalg.cholesky(0.5 * (cond_cov + cond_cov.T))
        out[:, k:] = cond_mean + rng.standard_normal((n_atoms, kk - k)) @ chol.T
    return out


def update_nu(labels, y, n_atoms, prior, rng):
    """Per-atom class probabilities from their Dirichlet conditionals."""
    a = prior.base_dirichlet
    if a is None:
        raise MisconfiguredModelError("classifier updates need prior.base_dirichlet")
    counts = np.zeros((n_atoms, a.size))
    np.add.at(counts, (np.asarray(labels, dtype=int), np.asarray(y, dtype=int)), 1.0)
    return np.array([rng.dirichlet(row + a) for row in counts])


# ---------------------------------------------------------------------------
# scales
# ---------------------------------------------------------------------------

def sigma_rate(x, state, prior, homogeneous=False):
    """(shape, rate) of the Gamma conditional of ``sigma^{-2}``."""
    a, b = prior.sigma_gamma
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    n, m, k = x.shape[0], state.m, state.k
    if n == 0:
        return a, b
    d = x - state.origin
    z = x @ state.active_basis
    if homogeneous:
        resid = d - state.active_locations[state.labels] @ state.active_basis.T
        q = float(np.sum(resid ** 2))
        return 0.5 * n * m + a, b + 0.5 * q
    q = float(np.sum(d * d) - np.sum(z * z))
    return 0.5 * n * (m - k) + a, b + 0.5 * max(q, 0.0)


def update_sigma(x, state, prior, rng, iteration=None):
    """Draw the residual standard deviation; unchanged when k = m."""
    if state.k == state.m and not prior.homogeneous:
        return state.sigma
    shape, rate = sigma_rate(x, state, prior, prior.homogeneous)
    if not (np.isfinite(rate) and rate > 0):
        raise InvariantViolationError(f"sigma^-2 conditional has rate {rate!r}", iteration)
    prec = rng.gamma(shape, 1.0 / rate)
    if not (np.isfinite(prec) and prec > 0):
        raise InvariantViolationError(f"sigma^-2 draw {prec!r} is not a positive number", iteration)
    return 1.0 / math.sqrt(prec)


def sample_truncated_gamma(shape, rate, upper, rng):
    """Gamma(shape, rate) restricted to ``[0, upper]``, broadcast over arrays.

    Inverse-CDF on the restricted interval; when the retained mass is
    negligible and the density increases towards ``upper``, an exponential
    envelope tangent at ``upper`` is used instead.
    """
    shape, rate = np.broadcast_arrays(np.asarray(shape, dtype=float), np.asarray(rate, dtype=float))
    out = np.empty(shape.shape)
    for idx in np.ndindex(shape.shape):
        out[idx] = _truncated_gamma_scalar(float(shape[idx]), float(rate[idx]), upper, rng)
    return out if out.ndim else float(out)


def _truncated_gamma_scalar(a, b, upper, rng):
    mass = stats.gamma.cdf(upper, a, scale=1.0 / b)
    if mass > 1e-12:
        v = stats.gamma.ppf(rng.random() * mass, a, scale=1.0 / b)
        return min(max(v, np.finfo(float).tiny), upper)
    slope = (a - 1.0) / upper - b
    if slope <= 0:
        raise InvariantViolationError(
            f"truncated Gamma({a:.4g}, {b:.4g}) on [0, {upper:.4g}] has no usable mass")
    while True:
        # s = upper - tau ~ Exp(slope) truncated to [0, upper]
        s = -math.log1p(rng.random() * math.expm1(-slope * upper)) / slope
        tau = upper - s
        if tau <= 0:
            continue
        log_ratio = (a - 1.0) * math.log(tau / upper) - (b + slope) * (tau - upper)
        if math.log(rng.random()) < log_ratio:
            return tau


def sigma0_conditional(x, state, prior):
    """(shapes, rates) of the active coordinate precisions."""
    a, b, _ = prior.sigma0_gamma
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    n, k = x.shape[0], state.k
    if n == 0 or k == 0:
        return np.full(k, a), np.full(k, b)
    z = x @ state.active_basis
    r = z - state.active_locations[state.labels]
    return np.full(k, 0.5 * n + a), b + 0.5 * np.sum(r ** 2, axis=0)


def update_sigma0(x, state, prior, rng):
    """Draw coordinate variances and restore the descending order.

    Returns ``(sigma0_diag, perm)``; ``perm`` reorders the active basis
    columns and atom coordinates consistently.  Inactive coordinates are
    refreshed from the prior.
    """
    k = state.k
    kk = state.sigma0_diag.size
    upper = prior.sigma0_gamma[2]
    shapes, rates = sigma0_conditional(x, state, prior)
    out = state.sigma0_diag.copy()
    if k:
        out[:k] = 1.0 / sample_truncated_gamma(shapes, rates, upper, rng)
    if kk > k:
        a, b, _ = prior.sigma0_gamma
        out[k:] = 1.0 / sample_truncated_gamma(np.full(kk - k, a), b, upper, rng)
    perm = np.arange(kk)
    perm[:k] = np.argsort(-out[:k], kind="stable")
    return out[perm], perm


def apply_permutation(state, perm):
    state.basis = state.basis[:, perm]
    state.atoms.locations = state.atoms.locations[:, perm]


# ---------------------------------------------------------------------------
# dimension
# ---------------------------------------------------------------------------

def dimension_loglik(x, state):
    """Complete-data log-likelihood for every ``l = 0..K`` (labels fixed)."""
    x = np.asarray(x, dtype=float).reshape(-1, state.m)
    kk = state.basis.shape[1]
    if x.shape[0] == 0:
        return np.zeros(kk + 1)
    s2 = state.sigma ** 2
    s0 = state.sigma0_diag
    z = x @ state.basis
    mu = state.atoms.locations[state.labels]
    d = x - state.origin
    base = -0.5 * (x.shape[0] * state.m * (LOG_2PI + math.log(s2)) + np.sum(d * d) / s2)
    per = (-0.5 * np.sum((z - mu) ** 2, axis=0) / s0
           - 0.5 * x.shape[0] * (np.log(s0) - math.log(s2))
           + 0.5 * np.sum(z * z, axis=0) / s2)
    return base + np.r_[0.0, np.cumsum(per)]


def dimension_log_probs(x, state, prior, settings, t):
    """Normalized (tempered) log-probabilities of ``k = 1..K``; -inf outside support."""
    kk = state.basis.shape[1]
    ll = dimension_loglik(x, state)
    with np.errstate(divide="ignore"):
        lp = np.log(prior.k_prior[:kk + 1]) + ll
    lp[0] = -np.inf
    support = np.isfinite(lp)
    if not np.any(support):
        raise InvariantViolationError("prior on k puts no mass on 1..K")
    lp[support] *= settings.tempering_power(t)
    lp[support] -= logsumexp(lp[support])
    return lp


def update_k(x, state, prior, settings, t, rng):
    lp = dimension_log_probs(x, state, prior, settings, t)
    return int(_categorical_rows(lp[None, :], rng)[0]), lp


def extend_U0(state, rng):
    """Redraw the inactive basis columns uniformly, orthogonal to the active ones and theta."""
    m, kk, k = state.m, state.basis.shape[1], state.k
    if kk + 1 > m:
        raise InfeasibleConstraintError(f"K={kk} leaves no room for the origin direction in R^{m}")
    if k == kk:
        return state.basis
    cons = state.active_basis
    d = _theta_direction(state.origin)
    if d is not None:
        cons = np.column_stack([cons, d])
    new = sample_uniform_stiefel_orthogonal_to(m, kk - k, cons, rng)
    return np.column_stack([state.active_basis, new])


# ---------------------------------------------------------------------------
# initialization and driver
# ---------------------------------------------------------------------------

def _prior_state(m, kk, k, prior, rng, n_classes):
    n_atoms = prior.trunc_atoms
    basis = sample_uniform_stiefel(m, kk, rng)
    w = null_space_basis(basis, m)
    theta = w @ (w.T @ prior.theta_mean)
    chol = np.linalg.cholesky(prior.base_cov[:kk, :kk]) if kk else np.zeros((0, 0))
    locs = prior.base_mean[:kk] + rng.standard_normal((n_atoms, kk)) @ chol.T
    a, b = prior.sigma_gamma
    sigma = 1.0 / math.sqrt(rng.gamma(a, 1.0 / b))
    if prior.homogeneous:
        s0 = np.full(kk, sigma ** 2)
    else:
        a0, b0, upper = prior.sigma0_gamma
        s0 = 1.0 / sample_truncated_gamma(np.full(kk, a0), b0, upper, rng)
        s0[:k] = np.sort(s0[:k])[::-1]
    nu = None
    if n_classes:
        nu = rng.dirichlet(prior.base_dirichlet, size=n_atoms)
    atoms = MixtureAtoms(update_weights(np.zeros(0, dtype=int), n_atoms, prior, rng), locs, nu)
    return ModelParams(k, basis, theta, s0, sigma, atoms, np.zeros(0, dtype=int))


def init_state(x, k, prior, rng, y=None, n_classes=None, unknown_k=False):
    """Data-driven starting state.

    The basis comes from the leading eigenvectors of the sample covariance,
    the origin from the centred mean, labels and atoms from k-means on the
    projected coordinates, and the scales from residual and within-cluster
    variances.  With ``unknown_k`` the basis carries ``k`` columns (the
    bound K) and the active dimension is the one with the largest prior
    times likelihood.
    """
    x = np.asarray(x, dtype=float)
    n, m = x.shape
    kk = int(k)
    if not 0 <= kk <= m:
        raise InvalidDimensionError(f"k={kk} outside 0..{m}")
    if n_classes is None and y is not None:
        n_classes = prior.n_classes
    if n < 2:
        return _prior_state(m, kk, 1 if unknown_k and kk else kk, prior, rng, n_classes)
    n_atoms = prior.trunc_atoms
    xbar = x.mean(axis=0)
    cov = np.cov(x, rowvar=False).reshape(m, m)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if kk and vals[kk - 1] <= 1e-12 * max(vals[0], 1e-300):
        log.warning("sample covariance has rank < %d; starting from a uniform frame", kk)
        basis = sample_uniform_stiefel(m, kk, rng)
    else:
        basis = vecs[:, :kk]
    theta = xbar - basis @ (basis.T @ xbar) if kk < m else np.zeros(m)
    z = x @ basis

    n_clusters = max(1, min(n_atoms, n, 10))
    labels = np.zeros(n, dtype=int)
    if kk and n_clusters > 1:
        seed = int(rng.integers(2 ** 31 - 1))
        _, labels = kmeans2(z, n_clusters, iter=50, minit="++", seed=seed)
    counts = _counts(labels, n_atoms)
    chol = np.linalg.cholesky(prior.base_cov[:kk, :kk]) if kk else np.zeros((0, 0))
    locs = prior.base_mean[:kk] + rng.standard_normal((n_atoms, kk)) @ chol.T
    for j in np.flatnonzero(counts):
        locs[j] = z[labels == j].mean(axis=0)
    weights = (counts + prior.dp_concentration / n_atoms) / (n + prior.dp_concentration)

    within = z - locs[labels] if kk else np.zeros((n, 0))
    s0 = np.maximum(np.mean(within ** 2, axis=0), VARIANCE_FLOOR)
    resid = (x - theta) - z @ basis.T

    def residual_sigma(active):
        if prior.homogeneous:
            q = np.sum(resid ** 2) + np.sum(z[:, active:] ** 2) + np.sum(within[:, :active] ** 2)
            return math.sqrt(max(q / (n * m), VARIANCE_FLOOR))
        if active == m:
            return math.sqrt(max(float(np.mean(s0)) if kk else 1.0, VARIANCE_FLOOR))
        q = np.sum(resid ** 2) + np.sum(z[:, active:] ** 2)
        return math.sqrt(max(q / (n * (m - active)), VARIANCE_FLOOR))

    nu = None
    if n_classes:
        yy = np.asarray(y, dtype=int)
        cnt = np.zeros((n_atoms, n_classes))
        np.add.at(cnt, (labels, yy), 1.0)
        nu = cnt + prior.base_dirichlet
        nu /= nu.sum(axis=1, keepdims=True)
    atoms = MixtureAtoms(weights, locs, nu)

    def build(active):
        sig = residual_sigma(active)
        sd = np.full(kk, sig ** 2) if prior.homogeneous else s0.copy()
        st = ModelParams(active, basis.copy(), theta.copy(), sd, sig, atoms.copy(), labels.copy())
        if not prior.homogeneous and active:
            perm = np.arange(kk)
            perm[:active] = np.argsort(-sd[:active], kind="stable")
            st.sigma0_diag = sd[perm]
            apply_permutation(st, perm)
        return st

    if not unknown_k:
        return build(kk)
    best, best_lp = None, -np.inf
    for ell in range(1, kk + 1):
        if prior.k_prior[ell] <= 0:
            continue
        st = build(ell)
        lp = math.log(prior.k_prior[ell]) + dimension_loglik(x, st)[ell]
        if lp > best_lp:
            best, best_lp = st, lp
    if best is None:
        raise MisconfiguredModelError("prior on k puts no mass on 1..K")
    return best


def _check(state, iteration):
    state.check(tol=INVARIANT_TOL, iteration=iteration)


def _residuals(state):
    u = state.basis
    fr = float(np.linalg.norm(u.T @ u - np.eye(u.shape[1])))
    orr = float(np.linalg.norm(u.T @ state.origin)) if u.shape[1] else 0.0
    return fr, orr


def run_chain(x, prior, settings, y=None, init=None, callback=None):
    """Run one chain and return the stored post-burn-in draws.

    Parameters
    ----------
    x : ndarray, shape (n, m)
    prior : PriorConfig
    settings : ChainSettings
    y : ndarray of int in 1..c, optional
        Class labels; required by the classifier modes.
    init : ModelParams, optional
        Starting state; by default one is built by ``init_state``.
    callback : callable, optional
        Called as ``callback(t, state)`` after every iteration.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidDimensionError("data must be an (n, m) array")
    if not np.all(np.isfinite(x)):
        raise InvalidDimensionError("data contain non-finite values")
    n, m = x.shape
    if m != prior.theta_mean.size:
        raise InvalidDimensionError(f"data have {m} columns but the prior is for m={prior.theta_mean.size}")
    rng = np.random.default_rng(settings.seed)

    yy = None
    n_classes = None
    if settings.classifier:
        if y is None:
            raise MisconfiguredModelError("classifier modes need class labels")
        if prior.base_dirichlet is None:
            raise MisconfiguredModelError("classifier modes need prior.base_dirichlet")
        n_classes = prior.n_classes
        yy = np.asarray(y, dtype=int).ravel() - 1
        if yy.size != n or (n and (yy.min() < 0 or yy.max() >= n_classes)):
            raise InvalidDimensionError(f"class labels must be {n} integers in 1..{n_classes}")

    if settings.fixed_dimension:
        kk = int(settings.fixed_k)
        if not 0 <= kk <= m:
            raise InvalidDimensionError(f"fixed_k={kk} outside 0..{m}")
        if kk > prior.base_mean.size:
            raise InvalidDimensionError("base measure has fewer coordinates than fixed_k")
    else:
        kk = prior.k_max
        if kk + 1 > m:
            raise InfeasibleConstraintError(f"K={kk} must be at most m-1={m - 1}")

    state = init.copy() if init is not None else init_state(
        x, kk, prior, rng, y=yy, n_classes=n_classes, unknown_k=not settings.fixed_dimension)
    if state.basis.shape[1] != kk or state.m != m:
        raise InvalidDimensionError("initial state does not match the data and settings")
    if state.labels is None or state.labels.size != n:
        state.labels = np.zeros(n, dtype=int)
    _check(state, 0)

    trace = {name: np.empty(settings.iterations) for name in
             ("k", "sigma", "loglik", "frame_residual", "origin_residual")}
    if not settings.fixed_dimension:
        trace["k_logprob"] = np.empty((settings.iterations, kk + 1))
    draws = []
    for t in range(1, settings.iterations + 1):
        try:
            # basis, then fresh inactive columns
            active = update_U0(x, state, prior, settings, rng)
            state.basis = np.column_stack([active, state.basis[:, state.k:]])
            if not settings.fixed_dimension:
                state.basis = extend_U0(state, rng)
            # origin
            state.origin = sample_theta(x, state, prior, rng)
            # labels
            state.labels = update_labels(x, state, rng, yy)
            # stick weights
            state.atoms.weights = update_weights(state.labels, state.atoms.n_atoms, prior, rng)
            # atom locations, active and inactive coordinates
            state.atoms.locations = update_atoms(x, state, prior, settings, t, rng)
            # residual scale
            state.sigma = update_sigma(x, state, prior, rng, iteration=t)
            # coordinate scales
            if prior.homogeneous:
                state.sigma0_diag = np.full(kk, state.sigma ** 2)
            else:
                s0, perm = update_sigma0(x, state, prior, rng)
                state.sigma0_diag = s0
                apply_permutation(state, perm)
            # dimension
            if not settings.fixed_dimension:
                state.k, lp = update_k(x, state, prior, settings, t, rng)
                trace["k_logprob"][t - 1] = lp
                if not prior.homogeneous:
                    # a grown prefix may be out of order; relabel coordinates
                    perm = np.arange(kk)
                    perm[:state.k] = np.argsort(-state.sigma0_diag[:state.k], kind="stable")
                    state.sigma0_diag = state.sigma0_diag[perm]
                    apply_permutation(state, perm)
            # class probabilities
            if settings.classifier:
                state.atoms.class_probs = update_nu(state.labels, yy, state.atoms.n_atoms, prior, rng)
        except InvariantViolationError as exc:
            if exc.iteration is None:
                exc.iteration = t
            raise
        _check(state, t)
        fr, orr = _residuals(state)
        trace["k"][t - 1] = state.k
        trace["sigma"][t - 1] = state.sigma
        trace["frame_residual"][t - 1] = fr
        trace["origin_residual"][t - 1] = orr
        trace["loglik"][t - 1] = float(np.sum(log_density(x, state))) if n else 0.0
        if t > settings.burn_in and (t - 1 - settings.burn_in) % settings.thin == 0:
            draws.append(state.copy())
        if callback is not None:
            callback(t, state)
    return PosteriorDraws(draws, settings, trace)
