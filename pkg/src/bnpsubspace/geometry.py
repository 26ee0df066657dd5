"""Affine subspaces, principal subspaces and Bayes point estimates of a subspace.

An affine subspace is stored as an orthonormal basis ``U`` (m x k) and an
origin ``theta`` with ``U' theta = 0``; its projection matrix is ``R = U U'``
and ``S = {R y + theta}``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, NonUniqueMinimizerError
from .manifold import FRAME_TOL, check_frame

logger = logging.getLogger(__name__)

TIE_TOL = 1e-9


def sign_convention(u):
    """Flip columns so that each one's first nonzero entry is positive."""
    u = np.array(u, dtype=float, copy=True)
    for j in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
    return u


@dataclass
class AffineSubspace:
    """k-dimensional affine subspace ``{U y + theta}`` of R^m."""

    basis: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).ravel()
        m = self.origin.size
        self.basis = check_frame(np.asarray(self.basis, dtype=float).reshape(m, -1))
        if self.basis.shape[1] and np.max(np.abs(self.basis.T @ self.origin)) > FRAME_TOL * max(
                1.0, np.linalg.norm(self.origin)):
            raise InvalidDimensionError("origin must be orthogonal to the basis")

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def ambient_dim(self):
        return self.origin.size

    @property
    def projection(self):
        return self.basis @ self.basis.T

    @classmethod
    def from_projection(cls, r, theta, tol=1e-8):
        """Build from a projection matrix and origin, checking ``R = R' = R^2``."""
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float).ravel()
        if r.shape != (theta.size, theta.size):
            raise InvalidDimensionError(f"projection shape {r.shape} vs origin size {theta.size}")
        if np.linalg.norm(r - r.T) > tol or np.linalg.norm(r @ r - r) > tol:
            raise InvalidDimensionError("matrix is not a symmetric idempotent projection")
        w, v = np.linalg.eigh(0.5 * (r + r.T))
        u = sign_convention(v[:, w > 0.5][:, ::-1])
        theta = theta - u @ (u.T @ theta)
        return cls(u, theta)


@dataclass
class MomentSummary:
    """Mean vector and covariance matrix of a distribution on R^m."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = self.mean.size
        if self.covariance.shape != (m, m):
            raise InvalidDimensionError("covariance shape does not match mean")
        if np.linalg.norm(self.covariance - self.covariance.T) > 1e-10 * max(
                1.0, np.linalg.norm(self.covariance)):
            raise InvalidDimensionError("covariance must be symmetric")
        self.covariance = 0.5 * (self.covariance + self.covariance.T)

    @classmethod
    def from_data(cls, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return cls(x.mean(axis=0), np.cov(x, rowvar=False, bias=True).reshape(x.shape[1], x.shape[1]))

    def eigen(self):
        """Eigenvalues (descending) and matching eigenvectors of the covariance."""
        w, v = np.linalg.eigh(self.covariance)
        return w[::-1], v[:, ::-1]


def _check_point(s, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != s.ambient_dim:
        raise InvalidDimensionError(f"point has dimension {x.shape[-1]}, subspace lives in R^{s.ambient_dim}")
    return x


def project_point(s, x):
    """Orthogonal projection ``R x + theta`` of x (or rows of x) onto s."""
    x = _check_point(s, x)
    return (x @ s.basis) @ s.basis.T + s.origin


def residual(s, x):
    """Residual ``x - R x - theta``, orthogonal to the basis of s."""
    x = _check_point(s, x)
    return x - project_point(s, x)


def subspace_coordinates(s, x):
    """Isometric coordinates ``U' x`` of the projection of x onto s."""
    return _check_point(s, x) @ s.basis


def projection_risk(s, moments):
    """Expected squared distance ``E||X - Pr_S(X)||^2`` under the given moments."""
    q = np.eye(s.ambient_dim) - s.projection
    d = q @ moments.mean - s.origin
    return float(np.trace(q @ moments.covariance @ q) + d @ d)


def principal_subspace(moments, d):
    """The d-dimensional affine subspace minimizing the projection risk.

    Raises
    ------
    NonUniqueMinimizerError
        If the d-th and (d+1)-th covariance eigenvalues tie within 1e-9.
    """
    lam, vec = moments.eigen()
    m = lam.size
    if not 0 <= d <= m:
        raise InvalidDimensionError(f"d must lie in [0, {m}], got {d}")
    if 0 < d < m and lam[d - 1] - lam[d] <= TIE_TOL:
        raise NonUniqueMinimizerError(
            f"eigenvalues {d} and {d + 1} tie ({lam[d - 1]:.12g} vs {lam[d]:.12g})")
    u = sign_convention(vec[:, :d])
    theta = moments.mean - u @ (u.T @ moments.mean)
    return AffineSubspace(u, theta)


def principal_dimension(moments, a):
    """Dimension minimizing ``a d + sum_{j > d} lambda_j`` (linear penalty slope a)."""
    if not a > 0:
        raise ValueError(f"penalty slope must be positive, got {a}")
    lam, _ = moments.eigen()
    m = lam.size
    if np.any(np.abs(lam - a) <= TIE_TOL):
        raise NonUniqueMinimizerError(f"penalty slope {a} equals a covariance eigenvalue")
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    risk = a * np.arange(m + 1) + tail
    return _unique_argmin(risk, "principal dimension")


def _unique_argmin(values, what):
    best = int(np.argmin(values))
    close = np.flatnonzero(values - values[best] <= TIE_TOL)
    if close.size > 1:
        raise NonUniqueMinimizerError(f"{what} is not unique: candidates {close.tolist()}")
    return best


# ---------------------------------------------------------------------------
# Bayes estimators from posterior draws
# ---------------------------------------------------------------------------

def estimate_subspace_L1(projections, origins):
    """Bayes estimate under squared Frobenius loss on (projection, origin).

    Parameters
    ----------
    projections : array_like, shape (T, m, m)
        Posterior draws of the projection matrix R.
    origins : array_like, shape (T, m)
        Matching draws of the origin theta.

    Returns
    -------
    r_hat : ndarray, shape (m, m)
    theta_hat : ndarray, shape (m,)
    k_hat : int

    Notes
    -----
    With posterior means ``Rbar`` and ``tbar``, ``2 Rbar - tbar tbar'`` is
    eigendecomposed (eigenvalues descending); ``k_hat`` minimizes
    ``k - sum_{j<=k} lambda_j`` over ``0..m``, ``r_hat`` projects onto the
    leading ``k_hat`` eigenvectors and ``theta_hat = (I - r_hat) tbar``.
    """
    rs = np.asarray(projections, dtype=float)
    ts = np.asarray(origins, dtype=float)
    if rs.ndim == 2:
        rs, ts = rs[None], np.atleast_2d(ts)
    if rs.shape[0] == 0:
        raise InvalidDimensionError("no posterior draws supplied")
    t, m, _ = rs.shape
    if rs.shape != (t, m, m) or ts.shape != (t, m):
        raise InvalidDimensionError(f"draw shapes {rs.shape} and {ts.shape} disagree")
    r_bar = rs.mean(axis=0)
    t_bar = ts.mean(axis=0)
    w, v = np.linalg.eigh(2.0 * r_bar - np.outer(t_bar, t_bar))
    lam, vec = w[::-1], v[:, ::-1]
    if lam[-1] < 0:
        logger.debug("L1 estimator: %d negative eigenvalue(s)", int(np.sum(lam < 0)))
    risk = np.arange(m + 1) - np.concatenate([[0.0], np.cumsum(lam)])
    k = _unique_argmin(risk, "L1 subspace dimension")
    if 0 < k < m and lam[k - 1] - lam[k] <= TIE_TOL:
        raise NonUniqueMinimizerError(
            f"eigenvalues {k} and {k + 1} tie in the L1 estimator")
    u = sign_convention(vec[:, :k])
    r_hat = u @ u.T
    theta_hat = t_bar - r_hat @ t_bar
    return r_hat, theta_hat, k


def stack_l2_frame(basis, origin):
    """Embed (U, theta) as the m x m frame [U, theta/|theta|, 0] and |theta|.

    A zero origin contributes a zero column.
    """
    u = np.asarray(basis, dtype=float)
    theta = np.asarray(origin, dtype=float).ravel()
    m, k = u.shape
    if k >= m and np.linalg.norm(theta) > 0:
        raise InvalidDimensionError("a full-dimensional subspace has zero origin")
    out = np.zeros((m, m))
    out[:, :k] = u
    w = float(np.linalg.norm(theta))
    if w > 0 and k < m:
        out[:, k] = theta / w
    return out, w


def _matrix_sqrt_trace(b):
    """``tr((B'B)^{1/2})``, i.e. the nuclear norm of B, via a clamped eigendecomposition."""
    w = np.linalg.eigvalsh(b.T @ b)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def estimate_subspace_L2(frames, norms):
    """Bayes estimate under squared Frobenius loss on the stacked frame.

    Parameters
    ----------
    frames : array_like, shape (T, m, m)
        Draws ``[U, theta/|theta|, 0]`` (see :func:`stack_l2_frame`).
    norms : array_like, shape (T,)
        Draws of ``|theta|``.

    Returns
    -------
    u1 : ndarray, shape (m, k_hat + 1)
        Orthonormal polar factor of the first ``k_hat + 1`` columns of the
        posterior mean frame; the first ``k_hat`` columns are the estimated
        directions and the last the origin direction.
    w_hat : float
        Posterior mean of ``|theta|``; the estimated origin is
        ``w_hat * u1[:, -1]``.
    k_hat : int
        Estimated subspace dimension, minimizing
        ``g(k) = k - 2 tr((Ubar_(k+1)' Ubar_(k+1))^{1/2})`` over ``0..m-1``.
    """
    us = np.asarray(frames, dtype=float)
    ws = np.asarray(norms, dtype=float).ravel()
    if us.ndim == 2:
        us = us[None]
    if us.shape[0] == 0:
        raise InvalidDimensionError("no posterior draws supplied")
    t, m, m2 = us.shape
    if m != m2 or ws.size != t:
        raise InvalidDimensionError(f"draw shapes {us.shape} and {ws.shape} disagree")
    u_bar = us.mean(axis=0)
    w_bar = float(ws.mean())
    g = np.array([k - 2.0 * _matrix_sqrt_trace(u_bar[:, :k + 1]) for k in range(m)])
    k = _unique_argmin(g, "L2 subspace dimension")
    b = u_bar[:, :k + 1]
    p, s, qt = np.linalg.svd(b, full_matrices=False)
    if s[-1] <= TIE_TOL:
        raise NonUniqueMinimizerError(
            f"mean frame block of width {k + 1} is rank deficient (smallest singular value {s[-1]:.3g})")
    return p @ qt, w_bar, k


def l2_estimate_subspace(u1, w_hat):
    """AffineSubspace from the L2 estimator output."""
    k = u1.shape[1] - 1
    return AffineSubspace(u1[:, :k], w_hat * u1[:, k] - u1[:, :k] @ (u1[:, :k].T @ (w_hat * u1[:, k])))


def principal_angles(a, b):
    """Principal angles (radians, ascending) between the column spans of a and b."""
    qa, _ = np.linalg.qr(np.asarray(a, dtype=float))
    qb, _ = np.linalg.qr(np.asarray(b, dtype=float))
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))
