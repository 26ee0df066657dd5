"""Sampling and density evaluation on Stiefel manifolds.

Frames are plain ``(m, k)`` float arrays with orthonormal columns; ``k = 0``
is the empty frame of shape ``(m, 0)``.  The matrix Bingham-von Mises-Fisher
(BMF) family used here has unnormalized log-density

    tr(linear' X) + tr(quad_small X' quad_large X)

and is sampled column by column.  Each column's full conditional is a
vector BMF on the unit sphere of the null space of the remaining columns
(plus any extra orthogonality constraint).  When its quadratic part vanishes
the column is drawn exactly (von Mises-Fisher, Wood's rejection scheme);
otherwise a sweep of Givens-plane Gibbs moves is made on the sphere, each
angle being drawn with an independence Metropolis step whose proposal is a
refined grid approximation of the exact angular conditional.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from .errors import (InfeasibleConstraintError, InvalidDimensionError,
                     InvalidInitialStateError)

FRAME_TOL = 1e-10

_COARSE_CELLS = 128
_WINDOW_HALF_WIDTH = 10.0
_WINDOW_CELLS = 80


@dataclass
class BmfParams:
    """Natural parameters of a matrix BMF distribution on V(k, m).

    Attributes
    ----------
    linear : ndarray, shape (m, k)
    quad_small : ndarray, shape (k, k), symmetric
    quad_large : ndarray, shape (m, m), symmetric
    """

    linear: np.ndarray
    quad_small: np.ndarray
    quad_large: np.ndarray

    def __post_init__(self):
        self.linear = np.atleast_2d(np.asarray(self.linear, dtype=float))
        self.quad_small = np.atleast_2d(np.asarray(self.quad_small, dtype=float))
        self.quad_large = np.atleast_2d(np.asarray(self.quad_large, dtype=float))
        m, k = self.linear.shape
        if self.quad_small.shape != (k, k) or self.quad_large.shape != (m, m):
            raise InvalidDimensionError(
                f"BMF parameter shapes disagree: linear {self.linear.shape}, "
                f"quad_small {self.quad_small.shape}, quad_large {self.quad_large.shape}")
        if not np.allclose(self.quad_small, self.quad_small.T, atol=1e-10, rtol=0):
            raise InvalidDimensionError("quad_small must be symmetric")
        if not np.allclose(self.quad_large, self.quad_large.T, atol=1e-10, rtol=0):
            raise InvalidDimensionError("quad_large must be symmetric")

    @classmethod
    def zeros(cls, m, k):
        return cls(np.zeros((m, k)), np.zeros((k, k)), np.zeros((m, m)))

    @property
    def shape(self):
        return self.linear.shape


def frame_residual(x):
    """Frobenius norm of ``x'x - I``."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x.T @ x - np.eye(x.shape[1])))


def check_frame(x, tol=FRAME_TOL):
    """Validate an orthonormal frame and return it as a float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidDimensionError(f"frame must be a 2-d array, got shape {x.shape}")
    if x.shape[1] > x.shape[0]:
        raise InvalidDimensionError(f"frame has more columns than rows: {x.shape}")
    res = frame_residual(x)
    if res > tol:
        raise InvalidDimensionError(f"columns are not orthonormal (residual {res:.3g})")
    return x


def _as_constraint(constraint, m):
    if constraint is None:
        return np.zeros((m, 0))
    c = np.asarray(constraint, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != m:
        raise InvalidDimensionError(
            f"constraint has {c.shape[0]} rows, expected {m}")
    if c.shape[1] and frame_residual(c) > 1e-8:
        raise InvalidDimensionError("constraint columns must be orthonormal")
    return c


def _polar(t):
    """Orthonormal polar factor T (T'T)^{-1/2}, computed through an SVD."""
    u, _, vt = np.linalg.svd(t, full_matrices=False)
    return u @ vt


def null_space_basis(a, m):
    """Orthonormal basis (m, m - r) of the orthogonal complement of span(a)."""
    a = np.asarray(a, dtype=float).reshape(m, -1)
    r = a.shape[1]
    if r == 0:
        return np.eye(m)
    q, _ = np.linalg.qr(a, mode="complete")
    return q[:, r:]


def sample_uniform_stiefel(m, k, rng):
    """Draw a frame uniformly from V(k, m).

    Uses the polar factor of an ``m x k`` standard Gaussian matrix.
    """
    if m <= 0 or k < 0 or k > m:
        raise InvalidDimensionError(f"need 0 <= k <= m and m > 0, got m={m}, k={k}")
    if k == 0:
        return np.zeros((m, 0))
    return _polar(rng.standard_normal((m, k)))


def sample_uniform_stiefel_orthogonal_to(m, k, constraint, rng):
    """Draw a uniform k-frame in R^m orthogonal to the columns of ``constraint``."""
    if m <= 0 or k < 0:
        raise InvalidDimensionError(f"invalid dimensions m={m}, k={k}")
    c = _as_constraint(constraint, m)
    p = c.shape[1]
    if k + p > m:
        raise InfeasibleConstraintError(
            f"cannot fit a {k}-frame orthogonal to {p} constraint directions in R^{m}")
    if k == 0:
        return np.zeros((m, 0))
    t = rng.standard_normal((m, k))
    t = t - c @ (c.T @ t)
    x = _polar(t)
    # one more projection pass removes O(eps) leakage into the constraint
    x = _polar(x - c @ (c.T @ x))
    return x


def bmf_log_density_unnorm(x, params):
    """Unnormalized BMF log-density ``tr(F1'x) + tr(F2 x'F3 x)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape != params.shape:
        raise InvalidDimensionError(
            f"frame shape {x.shape} does not match parameter shape {params.shape}")
    return float(np.sum(params.linear * x)
                 + np.sum(params.quad_small * (x.T @ params.quad_large @ x)))


# ---------------------------------------------------------------------------
# vector samplers on the sphere
# ---------------------------------------------------------------------------

def _uniform_sphere(d, rng):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def sample_vmf(mean_dir, kappa, rng):
    """Exact von Mises-Fisher draw on S^{d-1} (Wood, 1994)."""
    mu = np.asarray(mean_dir, dtype=float)
    d = mu.size
    if d == 1:
        return np.array([1.0 if rng.random() < expit(2.0 * kappa) else -1.0]) * np.sign(mu[0] or 1.0)
    if kappa < 1e-12:
        return _uniform_sphere(d, rng)
    dm1 = d - 1.0
    b = dm1 / (2.0 * kappa + np.sqrt(4.0 * kappa ** 2 + dm1 ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + dm1 * np.log(1.0 - x0 ** 2)
    while True:
        z = rng.beta(dm1 / 2.0, dm1 / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random()
        if kappa * w + dm1 * np.log(1.0 - x0 * w) - c >= np.log(u):
            break
    # uniform direction orthogonal to mu
    v = rng.standard_normal(d)
    v -= mu * (mu @ v)
    v /= np.linalg.norm(v)
    return w * mu + np.sqrt(max(0.0, 1.0 - w ** 2)) * v


def _angle_logpdf(phi, coef):
    a1, b1, a2, b2 = coef
    return (a1 * np.cos(phi) + b1 * np.sin(phi)
            + a2 * np.cos(2.0 * phi) + b2 * np.sin(2.0 * phi))


def _angle_logpdf_scalar(phi, coef):
    a1, b1, a2, b2 = coef
    return (a1 * math.cos(phi) + b1 * math.sin(phi)
            + a2 * math.cos(2.0 * phi) + b2 * math.sin(2.0 * phi))


_MODE_GRID = np.linspace(-np.pi, np.pi, 64, endpoint=False)
_MODE_TRIG = np.stack([np.cos(_MODE_GRID), np.sin(_MODE_GRID),
                       np.cos(2 * _MODE_GRID), np.sin(2 * _MODE_GRID)])
_MODE_PREV = np.roll(np.arange(_MODE_GRID.size), 1)
_MODE_NEXT = np.roll(np.arange(_MODE_GRID.size), -1)
_COARSE_EDGES = np.linspace(-np.pi, np.pi, _COARSE_CELLS + 1)
_COARSE_MID = 0.5 * (_COARSE_EDGES[:-1] + _COARSE_EDGES[1:])
_COARSE_TRIG = np.stack([np.cos(_COARSE_MID), np.sin(_COARSE_MID),
                         np.cos(2 * _COARSE_MID), np.sin(2 * _COARSE_MID)])
_WINDOW_OFFSETS = np.linspace(-_WINDOW_HALF_WIDTH, _WINDOW_HALF_WIDTH, _WINDOW_CELLS + 1)


def _angle_modes(coef):
    """Local maxima of the angular log-density and the curvature there."""
    a1, b1, a2, b2 = coef
    f = np.asarray(coef) @ _MODE_TRIG
    is_max = (f >= f[_MODE_PREV]) & (f > f[_MODE_NEXT])
    modes = []
    for phi in _MODE_GRID[is_max]:
        phi = float(phi)
        for _ in range(40):
            c1, s1, c2, s2 = math.cos(phi), math.sin(phi), math.cos(2 * phi), math.sin(2 * phi)
            g = -a1 * s1 + b1 * c1 - 2 * a2 * s2 + 2 * b2 * c2
            h = -a1 * c1 - b1 * s1 - 4 * a2 * c2 - 4 * b2 * s2
            step = -g / h if h < 0 else math.copysign(0.01, g)
            step = min(max(step, -0.1), 0.1)
            phi += step
            if abs(step) < 1e-12:
                break
        h = (-a1 * math.cos(phi) - b1 * math.sin(phi)
             - 4 * a2 * math.cos(2 * phi) - 4 * b2 * math.sin(2 * phi))
        modes.append((phi, -h))
    return modes


def _wrap(phi):
    return (phi + np.pi) % (2.0 * np.pi) - np.pi


def sample_angle(coef, phi0, rng):
    """One Markov step for an angle with log-density ``a1 cos + b1 sin + a2 cos2 + b2 sin2``.

    The proposal is a piecewise-constant density over a grid that is
    refined around every mode narrower than the coarse cell width; an
    independence Metropolis-Hastings correction makes the step leave the
    exact angular density invariant.
    """
    coef = tuple(float(c) for c in coef)
    if max(abs(c) for c in coef) < 1e-300:
        return rng.uniform(-np.pi, np.pi)
    coarse_w = 2.0 * np.pi / _COARSE_CELLS
    windows = []
    for phi_star, curv in _angle_modes(coef):
        if curv <= 0:
            continue
        s = 1.0 / math.sqrt(curv)
        if s < 2.0 * coarse_w:
            windows.append(_wrap(phi_star + s * _WINDOW_OFFSETS))
    if windows:
        e = np.sort(np.concatenate([_COARSE_EDGES] + windows))
        left = e[:-1]
        width = np.diff(e)
        keep = width > 0
        left, width = left[keep], width[keep]
        logm = _angle_logpdf(left + 0.5 * width, coef) + np.log(width)
    else:
        left = _COARSE_EDGES[:-1]
        width = np.full(_COARSE_CELLS, coarse_w)
        logm = np.asarray(coef) @ _COARSE_TRIG + math.log(coarse_w)
    logm = logm - logm.max()
    mass = np.exp(logm)
    cdf = np.cumsum(mass)
    total = cdf[-1]
    idx = min(int(np.searchsorted(cdf, rng.random() * total, side="right")), len(width) - 1)
    phi = float(left[idx] + rng.random() * width[idx])
    lq_new = logm[idx] - math.log(width[idx])

    phi0 = float(_wrap(phi0))
    idx0 = int(np.searchsorted(left, phi0, side="right")) - 1
    idx0 = min(max(idx0, 0), len(width) - 1)
    lq_old = logm[idx0] - math.log(width[idx0])
    log_alpha = ((_angle_logpdf_scalar(phi, coef) - lq_new)
                 - (_angle_logpdf_scalar(phi0, coef) - lq_old))
    if math.log(rng.random()) < log_alpha:
        return phi
    return phi0


def _orthonormal_completion(v):
    """Orthonormal basis (d, d-1) of the complement of unit vector ``v``."""
    return null_space_basis(v[:, None], v.size)


def sample_sphere_bmf(lin, quad, z0, rng):
    """One Markov step for density ``exp(lin'z + z'quad z)`` on the unit sphere.

    Exact when ``quad`` is zero (the target is von Mises-Fisher) or when the
    sphere is S^0.  Otherwise performs Givens-plane Gibbs moves in a basis
    whose first axis is the linear direction and whose remaining axes
    diagonalize ``quad`` on its complement.
    """
    lin = np.asarray(lin, dtype=float)
    quad = np.asarray(quad, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    d = z0.size
    if d == 1:
        return np.array([1.0 if rng.random() < expit(2.0 * lin[0]) else -1.0])
    if not np.any(quad):
        kappa = float(np.linalg.norm(lin))
        if kappa == 0.0:
            return _uniform_sphere(d, rng)
        return sample_vmf(lin / kappa, kappa, rng)

    quad = 0.5 * (quad + quad.T)
    lnorm = np.linalg.norm(lin)
    if lnorm > 0:
        v0 = lin / lnorm
        q = _orthonormal_completion(v0)
        _, evec = np.linalg.eigh(q.T @ quad @ q)
        basis = np.column_stack([v0, q @ evec])
    else:
        _, basis = np.linalg.eigh(quad)
    cb = basis.T @ lin
    ab = basis.T @ quad @ basis
    y = basis.T @ z0
    y /= np.linalg.norm(y)
    ay = ab @ y
    pairs = [(0, j) for j in range(1, d)] + [(j, j + 1) for j in range(1, d - 1)]
    for i, j in pairs:
        yi, yj = y[i], y[j]
        rho = np.hypot(yi, yj)
        if rho < 1e-300:
            continue
        aw_i = ay[i] - ab[i, i] * yi - ab[i, j] * yj
        aw_j = ay[j] - ab[j, i] * yi - ab[j, j] * yj
        coef = (rho * (cb[i] + 2.0 * aw_i),
                rho * (cb[j] + 2.0 * aw_j),
                0.5 * rho ** 2 * (ab[i, i] - ab[j, j]),
                rho ** 2 * ab[i, j])
        phi = sample_angle(coef, np.arctan2(yj, yi), rng)
        ni, nj = rho * np.cos(phi), rho * np.sin(phi)
        ay += ab[:, i] * (ni - yi) + ab[:, j] * (nj - yj)
        y[i], y[j] = ni, nj
    z = basis @ y
    return z / np.linalg.norm(z)


# ---------------------------------------------------------------------------
# matrix BMF Gibbs sampler
# ---------------------------------------------------------------------------

def _reorthonormalize(x, c):
    if x.shape[1] == 0:
        return x
    if c.shape[1]:
        x = x - c @ (c.T @ x)
    q, r = np.linalg.qr(x)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def _rotate_pair(x, j, l, params, rng):
    """Gibbs move rotating columns j and l inside the plane they span."""
    xj, xl = x[:, j].copy(), x[:, l].copy()

    def logf(phi):
        y = x.copy()
        c, s = np.cos(phi), np.sin(phi)
        y[:, j] = c * xj + s * xl
        y[:, l] = -s * xj + c * xl
        return bmf_log_density_unnorm(y, params)

    # exponent is a degree-2 trigonometric polynomial in the angle
    ang = np.linspace(0.0, 2.0 * np.pi, 5, endpoint=False)
    design = np.column_stack([np.ones(5), np.cos(ang), np.sin(ang), np.cos(2 * ang), np.sin(2 * ang)])
    vals = np.array([logf(a) for a in ang])
    coef = np.linalg.solve(design, vals)[1:]
    phi = sample_angle(coef, 0.0, rng)
    c, s = np.cos(phi), np.sin(phi)
    x[:, j] = c * xj + s * xl
    x[:, l] = -s * xj + c * xl


def sample_bmf_gibbs(params, init, constraint=None, sweeps=1, rng=None):
    """Column-wise Gibbs sampler for a BMF distribution on V(k, m).

    Parameters
    ----------
    params : BmfParams
    init : ndarray, shape (m, k)
        Starting frame; must be orthogonal to ``constraint``.
    constraint : ndarray, shape (m, p) or (m,), optional
        Orthonormal directions the frame must stay orthogonal to.
    sweeps : int
        Number of full passes over the columns (fixed ascending order).
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (m, k)
        Frame after ``sweeps`` passes.  The chain leaves BMF(params),
        restricted to frames orthogonal to ``constraint``, invariant.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = np.array(init, dtype=float, copy=True)
    if x.ndim != 2 or x.shape != params.shape:
        raise InvalidDimensionError(
            f"initial frame shape {x.shape} does not match parameters {params.shape}")
    m, k = x.shape
    c = _as_constraint(constraint, m)
    if k + c.shape[1] > m:
        raise InfeasibleConstraintError(
            f"{k}-frame with {c.shape[1]} constraints does not fit in R^{m}")
    if frame_residual(x) > 1e-8:
        raise InvalidInitialStateError("initial frame is not orthonormal")
    if c.shape[1] and np.max(np.abs(c.T @ x), initial=0.0) > 1e-8:
        raise InvalidInitialStateError("initial frame violates the orthogonality constraint")
    if k == 0:
        return x
    if sweeps < 1:
        raise ValueError("sweeps must be a positive integer")

    f1, f2, f3 = params.linear, params.quad_small, params.quad_large
    cols = np.arange(k)
    for _ in range(sweeps):
        for j in range(k):
            others = cols != j
            xo = x[:, others]
            basis = null_space_basis(np.hstack([xo, c]), m)
            lin = f1[:, j] + 2.0 * f3 @ (xo @ f2[others, j])
            lin_n = basis.T @ lin
            quad_n = f2[j, j] * (basis.T @ f3 @ basis)
            z = sample_sphere_bmf(lin_n, quad_n, basis.T @ x[:, j], rng)
            x[:, j] = basis @ z
        if k >= 2 and m - c.shape[1] - (k - 1) == 1:
            # single-column moves only flip signs here; rotate column pairs
            for j in range(k):
                _rotate_pair(x, j, (j + 1) % k, params, rng)
        if frame_residual(x) > FRAME_TOL or (
                c.shape[1] and np.max(np.abs(c.T @ x)) > FRAME_TOL):
            x = _reorthonormalize(x, c)
    return x
