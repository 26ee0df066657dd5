"""Parameter state, prior configuration and density evaluations.

The density of one observation is a location mixture

    f(x) = sum_j w_j N_m(x; U mu_j + theta, Sigma),
    Sigma = U (Sigma0 - sigma^2 I_k) U' + sigma^2 I_m,

evaluated here in factorized form: a k-variate Gaussian on the subspace
coordinates ``U'x`` times an isotropic Gaussian on the residual
``(I - U U')(x - theta)``.  ``Sigma`` is never formed.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import (InvalidDimensionError, InvariantViolationError,
                     MisconfiguredModelError)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class MixtureAtoms:
    """Truncated discrete mixing measure.

    Attributes
    ----------
    weights : ndarray, shape (N,)
    locations : ndarray, shape (N, K)
        Atom locations in subspace coordinates; only the first k columns
        are active.
    class_probs : ndarray, shape (N, c), optional
    regression_locs : ndarray, shape (N, l), optional
    """

    weights: np.ndarray
    locations: np.ndarray
    class_probs: np.ndarray = None
    regression_locs: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        n_atoms = self.weights.size
        self.locations = np.asarray(self.locations, dtype=float).reshape(n_atoms, -1)
        if self.class_probs is not None:
            self.class_probs = np.asarray(self.class_probs, dtype=float).reshape(n_atoms, -1)
        if self.regression_locs is not None:
            self.regression_locs = np.asarray(self.regression_locs, dtype=float).reshape(n_atoms, -1)

    @property
    def n_atoms(self):
        return self.weights.size

    def check(self, tol=1e-12):
        if self.n_atoms < 1:
            raise InvariantViolationError("mixture needs at least one atom")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > tol:
            raise InvariantViolationError(f"weights do not lie on the simplex (sum {self.weights.sum()!r})")
        if self.class_probs is not None:
            rows = self.class_probs.sum(axis=1)
            if np.any(self.class_probs < 0) or np.max(np.abs(rows - 1.0)) > tol:
                raise InvariantViolationError("class probability rows do not lie on the simplex")

    def copy(self):
        return MixtureAtoms(
            self.weights.copy(), self.locations.copy(),
            None if self.class_probs is None else self.class_probs.copy(),
            None if self.regression_locs is None else self.regression_locs.copy())


@dataclass
class ModelParams:
    """One full parameter state (a single MCMC draw).

    ``basis`` may carry more columns than ``k`` (and ``sigma0_diag`` /
    atom locations more coordinates) when the dimension is itself sampled;
    only the leading ``k`` are active.  ``sigma0_diag`` holds variances,
    ``sigma`` is the residual standard deviation.
    """

    k: int
    basis: np.ndarray
    origin: np.ndarray
    sigma0_diag: np.ndarray
    sigma: float
    atoms: MixtureAtoms
    labels: np.ndarray = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).ravel()
        m = self.origin.size
        self.basis = np.asarray(self.basis, dtype=float).reshape(m, -1)
        self.sigma0_diag = np.asarray(self.sigma0_diag, dtype=float).ravel()
        self.sigma = float(self.sigma)
        self.k = int(self.k)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int).ravel()
        if not 0 <= self.k <= self.basis.shape[1]:
            raise InvalidDimensionError(f"k={self.k} exceeds the {self.basis.shape[1]} stored basis columns")
        if self.sigma0_diag.size < self.k or self.atoms.locations.shape[1] < self.k:
            raise InvalidDimensionError("sigma0_diag / atom locations shorter than k")

    @property
    def m(self):
        return self.origin.size

    @property
    def active_basis(self):
        return self.basis[:, :self.k]

    @property
    def active_sigma0(self):
        return self.sigma0_diag[:self.k]

    @property
    def active_locations(self):
        return self.atoms.locations[:, :self.k]

    def covariance(self):
        """Dense within-cluster covariance (for checks and small problems)."""
        u = self.active_basis
        return (u @ np.diag(self.active_sigma0 - self.sigma ** 2) @ u.T
                + self.sigma ** 2 * np.eye(self.m))

    def check(self, tol=1e-9, iteration=None):
        """Raise InvariantViolationError if any state invariant fails."""
        def fail(msg):
            raise InvariantViolationError(msg, iteration)

        u = self.basis
        res = np.linalg.norm(u.T @ u - np.eye(u.shape[1]))
        if res > tol:
            fail(f"basis is not orthonormal (|U'U - I| = {res:.3g})")
        if u.shape[1]:
            leak = np.linalg.norm(u.T @ self.origin)
            if leak > tol * max(1.0, np.linalg.norm(self.origin)):
                fail(f"origin not orthogonal to basis (|U'theta| = {leak:.3g})")
        s0 = self.active_sigma0
        if not (np.all(np.isfinite(s0)) and np.all(s0 > 0)):
            fail("sigma0_diag must be positive")
        if np.any(np.diff(s0) > 0):
            fail("active sigma0_diag is not in descending order")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            fail(f"sigma must be positive, got {self.sigma!r}")
        try:
            self.atoms.check()
        except InvariantViolationError as exc:
            fail(str(exc))

    def copy(self):
        return ModelParams(
            self.k, self.basis.copy(), self.origin.copy(), self.sigma0_diag.copy(),
            self.sigma, self.atoms.copy(), None if self.labels is None else self.labels.copy())


def _as_matrix(v, n):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    return a


def _as_vector(v, n):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    return a.ravel()


@dataclass
class PriorConfig:
    """Hyperparameters of the full model.

    Gamma distributions are parameterized by (shape, rate) on precisions:
    ``sigma^{-2} ~ Ga(sigma_gamma)`` and ``sigma_j^{-2} ~ Ga(a, b)``
    truncated to ``[0, A]`` with ``sigma0_gamma = (a, b, A)``.
    ``k_prior[l]`` is the prior probability of dimension ``l``, ``l = 0..K``.
    """

    dp_concentration: float
    base_mean: np.ndarray
    base_cov: np.ndarray
    theta_mean: np.ndarray
    theta_cov: np.ndarray
    sigma_gamma: tuple = (1.0, 0.1)
    sigma0_gamma: tuple = (1.0, 0.1, 1e6)
    k_prior: np.ndarray = None
    trunc_atoms: int = 20
    base_dirichlet: np.ndarray = None
    consistency_exponents: tuple = None
    homogeneous: bool = False

    def __post_init__(self):
        self.base_mean = np.asarray(self.base_mean, dtype=float).ravel()
        kk = self.base_mean.size
        self.base_cov = _as_matrix(self.base_cov, kk)
        self.theta_mean = np.asarray(self.theta_mean, dtype=float).ravel()
        m = self.theta_mean.size
        self.theta_cov = _as_matrix(self.theta_cov, m)
        if self.k_prior is None:
            self.k_prior = np.r_[0.0, np.full(kk, 1.0 / kk)] if kk else np.ones(1)
        self.k_prior = np.asarray(self.k_prior, dtype=float).ravel()
        if self.base_dirichlet is not None:
            self.base_dirichlet = np.asarray(self.base_dirichlet, dtype=float).ravel()
        self.sigma_gamma = tuple(float(v) for v in self.sigma_gamma)
        self.sigma0_gamma = tuple(float(v) for v in self.sigma0_gamma)
        self.trunc_atoms = int(self.trunc_atoms)
        self.validate()

    @property
    def k_max(self):
        return self.k_prior.size - 1

    @property
    def n_classes(self):
        return None if self.base_dirichlet is None else self.base_dirichlet.size

    def validate(self):
        kk, m = self.base_mean.size, self.theta_mean.size
        if self.base_cov.shape != (kk, kk) or self.theta_cov.shape != (m, m):
            raise InvalidDimensionError("prior covariance shapes do not match their means")
        if self.k_max > kk:
            raise InvalidDimensionError(
                f"k_prior covers dimensions up to {self.k_max} but base_mean has {kk} coordinates")
        if self.k_max > m:
            raise InvalidDimensionError("k_prior extends beyond the ambient dimension")
        if not self.dp_concentration > 0:
            raise ValueError("dp_concentration must be positive")
        for name, mat in (("base_cov", self.base_cov), ("theta_cov", self.theta_cov)):
            if mat.size and np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))) <= 0:
                raise ValueError(f"{name} must be positive definite")
        if len(self.sigma_gamma) != 2 or min(self.sigma_gamma) <= 0:
            raise ValueError("sigma_gamma must be a positive (shape, rate) pair")
        if len(self.sigma0_gamma) != 3 or min(self.sigma0_gamma) <= 0:
            raise ValueError("sigma0_gamma must be a positive (shape, rate, truncation) triple")
        if np.any(self.k_prior < 0) or abs(self.k_prior.sum() - 1.0) > 1e-9:
            raise ValueError("k_prior must be a probability vector")
        if self.trunc_atoms < 1:
            raise ValueError("trunc_atoms must be at least 1")
        if self.base_dirichlet is not None and np.any(self.base_dirichlet <= 0):
            raise ValueError("base_dirichlet entries must be positive")

    @classmethod
    def default(cls, m, k_max, n_classes=None, **overrides):
        """Weakly informative defaults for data on roughly unit scale.

        Base measure N(0, I) on subspace coordinates, N(0, 10 I) on the
        origin, Ga(1, 0.1) on precisions, a uniform prior on k over
        ``1..k_max`` and a flat Dirichlet when ``n_classes`` is given.
        Scalars in ``overrides`` for vector or matrix fields are broadcast.
        """
        kw = dict(
            dp_concentration=1.0,
            base_mean=np.zeros(k_max),
            base_cov=np.eye(k_max),
            theta_mean=np.zeros(m),
            theta_cov=10.0 * np.eye(m),
            base_dirichlet=None if n_classes is None else np.ones(n_classes),
        )
        kw.update(overrides)
        if np.ndim(kw["base_mean"]) == 0:
            kw["base_mean"] = _as_vector(kw["base_mean"], k_max)
        if np.ndim(kw["theta_mean"]) == 0:
            kw["theta_mean"] = _as_vector(kw["theta_mean"], m)
        if kw.get("base_dirichlet") is not None and np.ndim(kw["base_dirichlet"]) == 0:
            kw["base_dirichlet"] = _as_vector(kw["base_dirichlet"], n_classes)
        return cls(**kw)

    def with_k_prior(self, k_prior):
        return replace(self, k_prior=np.asarray(k_prior, dtype=float))


# ---------------------------------------------------------------------------
# density evaluations
# ---------------------------------------------------------------------------

def _rows(x, m):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != m:
        raise InvalidDimensionError(f"points have dimension {x2.shape[1]}, model has {m}")
    return x2, single


def coordinate_log_kernels(z, params):
    """``log N_k(z_i; mu_j, Sigma0)`` for coordinate rows z, shape (n, N)."""
    k = params.k
    s0 = params.active_sigma0
    mu = params.active_locations
    if k == 0:
        return np.zeros((z.shape[0], params.atoms.n_atoms))
    quad = np.zeros((z.shape[0], mu.shape[0]))
    for j in range(k):
        quad += (z[:, j:j + 1] - mu[None, :, j]) ** 2 / s0[j]
    return -0.5 * (k * LOG_2PI + np.sum(np.log(s0)) + quad)


def residual_log_density(x, params, z=None):
    """Log-density of the residual ``(I - UU')(x - theta)`` under N(0, sigma^2) per axis."""
    m, k = params.m, params.k
    if k == m:
        return np.zeros(x.shape[0])
    if z is None:
        z = x @ params.active_basis
    d = x - params.origin
    r2 = np.maximum(np.einsum("ij,ij->i", d, d) - np.einsum("ij,ij->i", z, z), 0.0)
    s2 = params.sigma ** 2
    return -0.5 * ((m - k) * (LOG_2PI + np.log(s2)) + r2 / s2)


def component_log_densities(x, params):
    """Per-atom log kernel ``log N_m(x_i; U mu_j + theta, Sigma)``, shape (n, N)."""
    x2, _ = _rows(x, params.m)
    z = x2 @ params.active_basis
    return coordinate_log_kernels(z, params) + residual_log_density(x2, params, z)[:, None]


def log_density(x, params):
    """Mixture log-density of a point (or of each row of an array)."""
    x2, single = _rows(x, params.m)
    with np.errstate(divide="ignore"):
        logw = np.log(params.atoms.weights)
    out = logsumexp(component_log_densities(x2, params) + logw, axis=1)
    return float(out[0]) if single else out


def _coordinate_weights(x2, params):
    z = x2 @ params.active_basis
    with np.errstate(divide="ignore"):
        logw = np.log(params.atoms.weights)
    lw = coordinate_log_kernels(z, params) + logw
    lw -= logsumexp(lw, axis=1, keepdims=True)
    return np.exp(lw)


def class_conditional_probs(x, params):
    """Conditional class probabilities ``sum_j wtilde_j(U'x) nu_j``.

    Returns shape (c,) for a single point or (n, c) for rows.
    """
    if params.atoms.class_probs is None:
        raise MisconfiguredModelError("model state carries no class probabilities")
    x2, single = _rows(x, params.m)
    p = _coordinate_weights(x2, params) @ params.atoms.class_probs
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def classify_posterior_predictive(x, draws):
    """Posterior-predictive class probabilities averaged over draws.

    Parameters
    ----------
    x : ndarray, shape (m,) or (n, m)
    draws : PosteriorDraws or sequence of ModelParams

    Returns
    -------
    probs : ndarray, shape (c,) or (n, c)
    label : int or ndarray of int
        Modal class in ``1..c``; ties resolve to the smallest class index.
    """
    states = getattr(draws, "draws", draws)
    if len(states) == 0:
        raise InvalidDimensionError("no posterior draws supplied")
    total = None
    for s in states:
        p = class_conditional_probs(x, s)
        total = p if total is None else total + p
    probs = total / len(states)
    label = np.argmax(probs, axis=-1) + 1
    return probs, (int(label) if np.ndim(label) == 0 else label)


def regression_conditional_logdensity(y, x, params, sigma_y):
    """``log sum_j wtilde_j(U'x) N_l(y; psi_j, Sigma_y)`` for a single (y, x)."""
    psi = params.atoms.regression_locs
    if psi is None:
        raise MisconfiguredModelError("model state carries no regression locations")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ell = psi.shape[1]
    sy = _as_matrix(sigma_y, ell)
    if y.size != ell or sy.shape != (ell, ell):
        raise InvalidDimensionError("response dimension mismatch")
    x2, _ = _rows(x, params.m)
    z = x2 @ params.active_basis
    with np.errstate(divide="ignore"):
        lw = coordinate_log_kernels(z, params)[0] + np.log(params.atoms.weights)
    lw -= logsumexp(lw)
    chol = np.linalg.cholesky(sy)
    sol = np.linalg.solve(chol, (y[None, :] - psi).T)
    lk = -0.5 * (ell * LOG_2PI + 2.0 * np.sum(np.log(np.diag(chol))) + np.sum(sol ** 2, axis=0))
    return float(logsumexp(lw + lk))


# ---------------------------------------------------------------------------
# prior validity for strong consistency
# ---------------------------------------------------------------------------

@dataclass
class PriorViolation:
    condition: str
    detail: str

    def __str__(self):
        return f"{self.condition} fails ({self.detail})"


def validate_consistency_prior(cfg, m):
    """List the sufficient prior conditions for strong consistency that fail.

    The three conditions on ``(a, b, alpha, tau)`` and the truncation bound
    ``A`` are ``tau^2 > 4 A^2``, ``a < 2 (1 + alpha) m`` and
    ``1/a + 1/b < 1/m``.  An empty list means all hold.
    """
    if cfg.consistency_exponents is None:
        raise MisconfiguredModelError("prior has no consistency_exponents (a, b, alpha, tau)")
    a, b, alpha, tau = (float(v) for v in cfg.consistency_exponents)
    big_a = cfg.sigma0_gamma[2]
    out = []
    if not tau ** 2 > 4.0 * big_a ** 2:
        out.append(PriorViolation("tau^2 > 4A^2", f"tau^2={tau ** 2!r}, 4A^2={4.0 * big_a ** 2!r}"))
    if not a < 2.0 * (1.0 + alpha) * m:
        out.append(PriorViolation("a < 2(1+alpha)m", f"a={a!r}, 2(1+alpha)m={2.0 * (1.0 + alpha) * m!r}"))
    if not 1.0 / a + 1.0 / b < 1.0 / m:
        out.append(PriorViolation("1/a + 1/b < 1/m", f"1/a+1/b={1.0 / a + 1.0 / b!r}, 1/m={1.0 / m!r}"))
    return out
