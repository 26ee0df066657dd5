"""Stiefel-manifold samplers and the BMF log-density."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bnpsubspace.errors import (InfeasibleConstraintError, InvalidDimensionError,
                                InvalidInitialStateError)
from bnpsubspace.manifold import (BmfParams, bmf_log_density_unnorm, frame_residual,
                                  sample_angle, sample_bmf_gibbs, sample_sphere_bmf,
                                  sample_uniform_stiefel,
                                  sample_uniform_stiefel_orthogonal_to, sample_vmf)

from conftest import angle_grid_probs, random_frame

VMF_MEAN_KAPPA3 = 0.8099852939565044  # I1(3)/I0(3), by quadrature of exp(3 cos t)


def gram_schmidt_frame(rng, m, k):
    """Independent uniform-frame oracle: classical Gram-Schmidt of Gaussian columns."""
    out = np.zeros((m, k))
    for j in range(k):
        v = rng.standard_normal(m)
        for i in range(j):
            v -= (out[:, i] @ v) * out[:, i]
        out[:, j] = v / np.linalg.norm(v)
    return out


class TestUniformStiefel:
    def test_scalar_frame_is_a_fair_sign(self, rng):
        draws = np.array([sample_uniform_stiefel(1, 1, rng)[0, 0] for _ in range(4000)])
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs(np.mean(draws > 0) - 0.5) < 3 * 0.5 / np.sqrt(4000)

    def test_empty_frame(self, rng):
        assert sample_uniform_stiefel(3, 0, rng).shape == (3, 0)

    def test_dimension_errors(self, rng):
        with pytest.raises(InvalidDimensionError):
            sample_uniform_stiefel(2, 3, rng)
        with pytest.raises(InvalidDimensionError):
            sample_uniform_stiefel(0, 0, rng)

    def test_projection_mean_matches_gram_schmidt_oracle(self, rng):
        # E[UU'] = (k/m) I for the uniform law; the Gram-Schmidt oracle is
        # drawn independently as a second route to the same expectation
        m, k, n = 4, 2, 20_000
        lib = np.zeros((m, m))
        ref = np.zeros((m, m))
        for _ in range(n):
            u = sample_uniform_stiefel(m, k, rng)
            lib += u @ u.T
            g = gram_schmidt_frame(rng, m, k)
            ref += g @ g.T
        lib /= n
        ref /= n
        # entry variances of a rank-2 projector in R^4 are below 1/8
        tol = 4 * np.sqrt(0.125 / n)
        np.testing.assert_allclose(lib, (k / m) * np.eye(m), atol=tol)
        np.testing.assert_allclose(ref, (k / m) * np.eye(m), atol=tol)

    @given(st.integers(1, 7).flatmap(lambda m: st.tuples(st.just(m), st.integers(0, m))),
           st.integers(0, 2 ** 32 - 1))
    def test_frames_are_orthonormal(self, mk, seed):
        m, k = mk
        u = sample_uniform_stiefel(m, k, np.random.default_rng(seed))
        assert u.shape == (m, k)
        assert frame_residual(u) < 1e-10


class TestConstrainedStiefel:
    def test_complement_of_e1_in_plane(self, rng):
        for _ in range(20):
            u = sample_uniform_stiefel_orthogonal_to(2, 1, np.array([1.0, 0.0]), rng)
            np.testing.assert_allclose(np.abs(u[:, 0]), [0.0, 1.0], atol=1e-12)

    def test_complement_of_e1_e2_in_space(self, rng):
        c = np.eye(3)[:, :2]
        for _ in range(20):
            u = sample_uniform_stiefel_orthogonal_to(3, 1, c, rng)
            np.testing.assert_allclose(np.abs(u[:, 0]), [0.0, 0.0, 1.0], atol=1e-12)

    def test_constraint_holds_over_many_draws(self, rng):
        c = random_frame(rng, 5, 1)
        worst = 0.0
        for _ in range(10_000):
            u = sample_uniform_stiefel_orthogonal_to(5, 2, c, rng)
            worst = max(worst, np.max(np.abs(c.T @ u)))
        assert worst < 1e-9

    def test_infeasible(self, rng):
        with pytest.raises(InfeasibleConstraintError):
            sample_uniform_stiefel_orthogonal_to(3, 2, random_frame(rng, 3, 2), rng)

    def test_uniform_inside_the_complement(self, rng):
        # projection mean restricted to the complement is (k / (m - p)) times its projector
        m, k = 5, 2
        c = random_frame(rng, m, 2)
        acc = np.zeros((m, m))
        n = 20_000
        for _ in range(n):
            u = sample_uniform_stiefel_orthogonal_to(m, k, c, rng)
            acc += u @ u.T
        target = (k / (m - 2)) * (np.eye(m) - c @ c.T)
        assert np.max(np.abs(acc / n - target)) < 0.02


class TestBmfDensity:
    def test_zero_params(self, rng):
        x = random_frame(rng, 4, 2)
        assert bmf_log_density_unnorm(x, BmfParams.zeros(4, 2)) == 0.0

    def test_linear_equal_to_point(self, rng):
        x = random_frame(rng, 5, 3)
        p = BmfParams(x, np.zeros((3, 3)), np.zeros((5, 5)))
        assert bmf_log_density_unnorm(x, p) == pytest.approx(3.0, abs=1e-12)

    @pytest.mark.parametrize("t, expected", [(0.0, 2.0), (np.pi / 2, 0.0), (np.pi, -2.0)])
    def test_circle_hand_values(self, t, expected):
        p = BmfParams(np.array([[2.0], [0.0]]), np.zeros((1, 1)), np.zeros((2, 2)))
        x = np.array([[np.cos(t)], [np.sin(t)]])
        assert bmf_log_density_unnorm(x, p) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidDimensionError):
            bmf_log_density_unnorm(random_frame(rng, 4, 2), BmfParams.zeros(4, 3))

    def test_asymmetric_quad_rejected(self):
        with pytest.raises(InvalidDimensionError):
            BmfParams(np.zeros((2, 1)), np.zeros((1, 1)), np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_trace_formula_against_loop(self, rng):
        m, k = 5, 3
        x = random_frame(rng, m, k)
        a = rng.standard_normal((m, k))
        b = np.diag(rng.standard_normal(k))
        c0 = rng.standard_normal((m, m))
        c = c0 @ c0.T
        expected = sum(a[i, j] * x[i, j] for i in range(m) for j in range(k))
        expected += sum(b[j, j] * x[:, j] @ c @ x[:, j] for j in range(k))
        assert bmf_log_density_unnorm(x, BmfParams(a, b, c)) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2))
    def test_sign_flip_invariance_of_pure_bingham_column(self, seed, j):
        r = np.random.default_rng(seed)
        m, k = 4, 3
        x = random_frame(r, m, k)
        a = r.standard_normal((m, k))
        a[:, j] = 0.0
        c0 = r.standard_normal((m, m))
        p = BmfParams(a, np.diag(r.standard_normal(k)), c0 @ c0.T)
        y = x.copy()
        y[:, j] *= -1
        assert bmf_log_density_unnorm(y, p) == pytest.approx(bmf_log_density_unnorm(x, p), abs=1e-10)


class TestVmfAndAngles:
    def test_wood_sampler_mean_resultant(self, rng):
        kappa, d = 4.0, 3
        # E[mu'x] = coth(kappa) - 1/kappa on S^2
        expected = 1.0 / np.tanh(kappa) - 1.0 / kappa
        mu = np.array([0.0, 0.6, 0.8])
        draws = np.array([sample_vmf(mu, kappa, rng) @ mu for _ in range(20_000)])
        assert abs(draws.mean() - expected) < 3 * draws.std() / np.sqrt(draws.size)

    @pytest.mark.parametrize("coef", [(3.0, 0.0, 0.0, 0.0), (0.5, -1.0, 2.0, 1.0),
                                      (0.0, 0.0, 40.0, 0.0), (400.0, 10.0, -50.0, 3.0)])
    def test_angle_step_leaves_density_invariant(self, rng, coef):
        def logpdf(t):
            a1, b1, a2, b2 = coef
            return a1 * np.cos(t) + b1 * np.sin(t) + a2 * np.cos(2 * t) + b2 * np.sin(2 * t)

        probs = angle_grid_probs(logpdf, 20)
        # start from exact draws (inverse CDF on a fine grid), apply one step each
        fine = np.linspace(-np.pi, np.pi, 200_000, endpoint=False)
        w = np.exp(logpdf(fine) - logpdf(fine).max())
        start = rng.choice(fine, size=5000, p=w / w.sum())
        out = np.array([sample_angle(coef, s, rng) for s in start])
        counts = np.histogram(out, bins=np.linspace(-np.pi, np.pi, 21))[0]
        keep = probs * out.size > 5
        exp = probs[keep] * out.size
        obs = counts[keep]
        exp *= obs.sum() / exp.sum()
        assert stats.chisquare(obs, exp).pvalue > 1e-3

    def test_sphere_step_is_exact_vmf_without_quadratic(self, rng):
        lin = np.array([3.0, 0.0])
        vals = np.array([sample_sphere_bmf(lin, np.zeros((2, 2)), np.array([0.0, 1.0]), rng)[0]
                         for _ in range(10_000)])
        assert abs(vals.mean() - VMF_MEAN_KAPPA3) < 3 * vals.std() / np.sqrt(vals.size)

    def test_one_dimensional_sphere_is_a_sign(self, rng):
        c = 0.7
        vals = np.array([sample_sphere_bmf(np.array([c]), np.zeros((1, 1)), np.array([1.0]), rng)[0]
                         for _ in range(20_000)])
        p = np.exp(c) / (np.exp(c) + np.exp(-c))
        assert abs(np.mean(vals > 0) - p) < 3 * np.sqrt(p * (1 - p) / vals.size)


class TestBmfGibbs:
    def test_zero_params_give_uniform_frames(self, rng):
        m, k = 4, 2
        x = random_frame(rng, m, k)
        acc = np.zeros((m, m))
        n = 10_000
        for _ in range(n):
            x = sample_bmf_gibbs(BmfParams.zeros(m, k), x, rng=rng)
            acc += x @ x.T
        assert np.max(np.abs(acc / n - 0.5 * np.eye(m))) < 0.03

    def test_circle_vmf_mean(self, rng):
        p = BmfParams(np.array([[3.0], [0.0]]), np.zeros((1, 1)), np.zeros((2, 2)))
        x = np.array([[0.0], [1.0]])
        vals = np.empty(10_000)
        for i in range(vals.size):
            x = sample_bmf_gibbs(p, x, rng=rng)
            vals[i] = x[0, 0]
        assert abs(vals.mean() - VMF_MEAN_KAPPA3) < 3 * vals.std() / np.sqrt(vals.size)

    def test_constraint_is_respected(self, rng):
        c = np.array([1.0, 0.0, 0.0])
        p = BmfParams(rng.standard_normal((3, 1)), np.array([[0.7]]), np.diag([5.0, 1.0, 2.0]))
        x = np.array([[0.0], [1.0], [0.0]])
        for _ in range(500):
            x = sample_bmf_gibbs(p, x, constraint=c, rng=rng)
            assert abs(x[0, 0]) < 1e-9

    def test_init_violating_constraint(self, rng):
        with pytest.raises(InvalidInitialStateError):
            sample_bmf_gibbs(BmfParams.zeros(3, 1), np.array([[1.0], [0.0], [0.0]]),
                             constraint=np.array([1.0, 0.0, 0.0]), rng=rng)

    def test_bingham_circle_matches_quadrature(self, rng):
        # m=2, k=1 with both linear and quadratic parts: angle density
        # 1.5 cos t + 0.8 (cos t, sin t) C (cos t, sin t)'
        c = np.array([[2.0, 0.6], [0.6, -1.0]])
        p = BmfParams(np.array([[1.5], [0.0]]), np.array([[0.8]]), c)

        def logpdf(t):
            return 1.5 * np.cos(t) + 0.8 * (c[0, 0] * np.cos(t) ** 2 + 2 * c[0, 1] * np.cos(t) * np.sin(t)
                                            + c[1, 1] * np.sin(t) ** 2)

        x = np.array([[1.0], [0.0]])
        ang = np.empty(10_000)
        for i in range(ang.size):
            x = sample_bmf_gibbs(p, x, rng=rng)
            ang[i] = np.arctan2(x[1, 0], x[0, 0])
        counts = np.histogram(ang, bins=np.linspace(-np.pi, np.pi, 21))[0]
        assert stats.chisquare(counts, angle_grid_probs(logpdf, 20) * ang.size).pvalue > 0.01

    def test_square_frame_with_rotations(self, rng):
        # k = m: single columns can only flip, so pair rotations must mix
        p = BmfParams(np.diag([2.0, 0.5]), np.diag([0.3, -0.2]), np.diag([1.0, 2.0]))
        x = np.eye(2)
        dets = []
        for _ in range(3000):
            x = sample_bmf_gibbs(p, x, rng=rng)
            assert frame_residual(x) < 1e-10
            dets.append(np.linalg.det(x))
        assert {np.sign(d) for d in np.round(dets, 9)} == {-1.0, 1.0}

    @given(st.integers(0, 2 ** 32 - 1))
    def test_outputs_stay_on_constrained_manifold(self, seed):
        r = np.random.default_rng(seed)
        m, k = 6, 2
        c = random_frame(r, m, 1)
        x = sample_uniform_stiefel_orthogonal_to(m, k, c, r)
        a = r.standard_normal((m, k)) * 5
        g = r.standard_normal((m, m))
        p = BmfParams(a, np.diag(r.standard_normal(k) * 3), g @ g.T)
        for _ in range(3):
            x = sample_bmf_gibbs(p, x, constraint=c, rng=r)
        assert frame_residual(x) < 1e-10
        assert np.max(np.abs(c.T @ x)) < 1e-10

    def test_extreme_concentration_is_stable(self, rng):
        m, k = 8, 2
        g = rng.standard_normal((m, m))
        p = BmfParams(rng.standard_normal((m, k)) * 1e4, np.diag([-3e3, -1e3]), g @ g.T)
        x = random_frame(rng, m, k)
        for _ in range(20):
            x = sample_bmf_gibbs(p, x, rng=rng)
        assert np.all(np.isfinite(x))
        assert frame_residual(x) < 1e-10
