"""PCA, CCA, synergy vector and standardizer."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synergy_selfie.errors import SingularCovarianceError
from synergy_selfie.subspace import (cca_fit, cca_project, pca_fit, pca_project, pca_reconstruct,
                                     standardizer_apply, standardizer_fit, synergy)

from oracles import pearson


def symmetric_3x3_eigenvalues(A):
    """Closed-form trigonometric roots of the characteristic cubic, descending."""
    p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
    q = np.trace(A) / 3
    p2 = sum((A[i, i] - q) ** 2 for i in range(3)) + 2 * p1
    p = math.sqrt(p2 / 6)
    B = (A - q * np.eye(3)) / p
    r = min(max(np.linalg.det(B) / 2, -1.0), 1.0)
    phi = math.acos(r) / 3
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


class TestPca:
    def test_line_in_plane(self):
        t = np.linspace(-2, 3, 12)
        X = np.stack([2 * t + 1, -t + 4], axis=1)
        m = pca_fit(X, 2)
        direction = np.array([2.0, -1.0]) / math.sqrt(5)
        assert abs(m.components[:, 0] @ direction) == pytest.approx(1.0, abs=1e-12)
        assert m.explained_variance[1] == pytest.approx(0.0, abs=1e-12)

    def test_full_basis_reconstructs(self):
        X = np.random.default_rng(0).standard_normal((10, 4))
        m = pca_fit(X, 4)
        np.testing.assert_allclose(pca_reconstruct(m, pca_project(m, X)), X, atol=1e-8)

    def test_fixed_5x3_against_cubic_roots(self):
        X = np.array([[2.0, 0.0, 1.0], [1.0, 3.0, -1.0], [0.0, 1.0, 4.0],
                      [-2.0, 2.0, 0.5], [1.5, -1.0, 2.0]])
        Xc = X - X.mean(axis=0)
        expected = symmetric_3x3_eigenvalues(Xc.T @ Xc / 4)
        np.testing.assert_allclose(pca_fit(X, 3).explained_variance, expected, atol=1e-8)

    def test_gram_path_matches_covariance_path(self):
        X = np.random.default_rng(1).standard_normal((6, 9))
        gram = pca_fit(X, 4)  # n < c
        Xc = X - X.mean(axis=0)
        evals = np.sort(np.linalg.eigvalsh(Xc.T @ Xc))[::-1][:4] / 5
        np.testing.assert_allclose(gram.explained_variance, evals, atol=1e-10)
        np.testing.assert_allclose(gram.components.T @ gram.components, np.eye(4), atol=1e-10)

    def test_rank_deficient_basis_completed(self):
        X = np.zeros((4, 6))
        X[:, 0] = [1, 2, 3, 4]
        m = pca_fit(X, 3)
        np.testing.assert_allclose(m.components.T @ m.components, np.eye(3), atol=1e-10)

    def test_sign_convention(self):
        m = pca_fit(np.random.default_rng(2).standard_normal((30, 5)), 5)
        idx = np.argmax(np.abs(m.components), axis=0)
        assert np.all(m.components[idx, np.arange(5)] > 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 20), st.integers(1, 8), st.integers(0, 2**31))
    def test_orthonormal_and_descending(self, n, c, seed):
        X = np.random.default_rng(seed).standard_normal((n, c))
        p = min(n - 1, c)
        m = pca_fit(X, p)
        np.testing.assert_allclose(m.components.T @ m.components, np.eye(p), atol=1e-9)
        assert np.all(np.diff(m.explained_variance) <= 1e-12)

    def test_projection(self):
        rng = np.random.default_rng(3)
        m = pca_fit(rng.standard_normal((20, 4)), 3)
        np.testing.assert_allclose(pca_project(m, m.mean), 0.0, atol=1e-15)
        np.testing.assert_allclose(pca_project(m, m.mean + m.components[:, 0]), [1, 0, 0], atol=1e-12)
        x = rng.standard_normal(4)
        naive = [sum((x[i] - m.mean[i]) * m.components[i, j] for i in range(4)) for j in range(3)]
        np.testing.assert_allclose(pca_project(m, x), naive, atol=1e-12)

    def test_errors(self):
        X = np.ones((5, 3))
        with pytest.raises(ValueError):
            pca_fit(X, 5)
        with pytest.raises(ValueError):
            pca_fit(X[:1], 1)
        with pytest.raises(ValueError):
            pca_project(pca_fit(np.random.default_rng(0).random((5, 3)), 2), np.ones(4))


class TestCca:
    def test_identical_views(self):
        X = np.random.default_rng(0).standard_normal((50, 2))
        assert np.all(cca_fit(X, X.copy(), 2, ridge=1e-6).correlations >= 1 - 1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_one_dimensional_equals_abs_pearson(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(40)
        y = (-1) ** seed * 0.7 * x + rng.standard_normal(40)
        m = cca_fit(x, y, 1, ridge=0.0)
        assert m.correlations[0] == pytest.approx(abs(pearson(x, y)), abs=1e-8)

    def test_independent_views(self):
        rng = np.random.default_rng(11)
        m = cca_fit(rng.standard_normal((10000, 3)), rng.standard_normal((10000, 3)), 3)
        assert np.all(m.correlations < 0.1)

    def test_variate_correlations_match_model(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((80, 4))
        Y = X[:, :3] @ rng.standard_normal((3, 3)) + rng.standard_normal((80, 3))
        m = cca_fit(X, Y, 3, ridge=0.0)
        U, V = cca_project(m, X, Y)
        for i in range(3):
            assert pearson(U[:, i], V[:, i]) == pytest.approx(m.correlations[i], abs=1e-6)

    def test_k1_projection_matches_dot_products(self):
        rng = np.random.default_rng(5)
        X, Y = rng.standard_normal((30, 3)), rng.standard_normal((30, 2))
        Y[:, 0] += X[:, 1]
        m = cca_fit(X, Y, 1)
        x, y = rng.standard_normal(3), rng.standard_normal(2)
        u, v = cca_project(m, x, y)
        assert u[0] == pytest.approx(sum((x[i] - m.x_mean[i]) * m.A[i, 0] for i in range(3)), abs=1e-12)
        assert v[0] == pytest.approx(sum((y[i] - m.y_mean[i]) * m.B[i, 0] for i in range(2)), abs=1e-12)
        U, V = cca_project(m, m.x_mean, m.y_mean)
        np.testing.assert_array_equal(U, 0.0)
        np.testing.assert_array_equal(V, 0.0)

    def test_conventions(self):
        rng = np.random.default_rng(6)
        X, Y = rng.standard_normal((60, 4)), rng.standard_normal((60, 5))
        Y[:, :2] += X[:, 2:]
        m = cca_fit(X, Y, 4)
        assert np.all(np.diff(m.correlations) <= 1e-12)
        assert np.all((m.correlations >= 0) & (m.correlations <= 1))
        for j in range(4):
            assert m.A[np.flatnonzero(m.A[:, j])[0], j] > 0

    def test_singular_without_ridge(self):
        X = np.random.default_rng(7).standard_normal((20, 3))
        X[:, 2] = X[:, 0]
        with pytest.raises(SingularCovarianceError, match="ridge"):
            cca_fit(X, X[:, :2], 1, ridge=0.0)
        cca_fit(X, X[:, :2], 1, ridge=1e-3)

    def test_errors(self):
        X = np.ones((10, 2))
        with pytest.raises(ValueError):
            cca_fit(X, np.ones((9, 2)), 1)
        with pytest.raises(ValueError):
            cca_fit(X, np.ones((10, 2)), 3)
        with pytest.raises(ValueError):
            cca_fit(X, np.ones((10, 2)), 1, ridge=-1.0)


class TestSynergy:
    def test_examples(self):
        np.testing.assert_array_equal(synergy([1.0, 0.0], [0.0, 0.0]), [1.0, 0.0])
        np.testing.assert_array_equal(synergy([2.0, -1.0], [2.0, -1.0]), [0.0, 0.0])
        np.testing.assert_allclose(synergy([3.0, 4.0], [0.0, 0.0]), [0.6, 0.8], atol=1e-15)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6), st.integers(0, 2**31))
    def test_unit_norm_or_zero(self, u, seed):
        v = np.random.default_rng(seed).standard_normal(len(u))
        s = synergy(np.array(u), v)
        n = np.linalg.norm(s)
        assert n == 0.0 or abs(n - 1.0) < 1e-12

    def test_row_wise(self):
        U = np.array([[3.0, 4.0], [1.0, 1.0]])
        V = np.array([[0.0, 0.0], [1.0, 1.0]])
        np.testing.assert_allclose(synergy(U, V), [[0.6, 0.8], [0.0, 0.0]])


class TestStandardizer:
    def test_constant_column_becomes_zero(self):
        S = np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
        out = standardizer_apply(standardizer_fit(S), S)
        np.testing.assert_array_equal(out[:, 1], 0.0)

    def test_two_points(self):
        S = np.array([[-1.0], [1.0]])
        np.testing.assert_array_equal(standardizer_apply(standardizer_fit(S), S), S)

    def test_random_matches_naive_stats(self):
        S = np.random.default_rng(8).standard_normal((25, 4)) * 3 + 1
        m = standardizer_fit(S)
        for j in range(4):
            col = S[:, j]
            mu = sum(col) / len(col)
            sd = math.sqrt(sum((c - mu) ** 2 for c in col) / len(col))
            assert m.mean[j] == pytest.approx(mu, abs=1e-12)
            assert m.std[j] == pytest.approx(sd, abs=1e-12)
        out = standardizer_apply(m, S)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-12)
