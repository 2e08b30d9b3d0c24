import numpy as np
import pytest

from pgnn.errors import (
    ConvergenceWarning,
    DegenerateInputError,
    ShapeError,
    SubspaceAmbiguityWarning,
    UndefinedMetricError,
)
from pgnn.linalg import (
    center_columns,
    matmul,
    pca_topk,
    qr_orthonormal,
    ridge_fit_r2,
    spectral_norm,
    svd,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self, rng):
        a = rng.standard_normal((3, 5))
        assert np.array_equal(matmul(np.eye(3), a), a)

    def test_zero(self, rng):
        a = rng.standard_normal((4, 3))
        assert np.all(matmul(a, np.zeros((3, 2))) == 0)

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 2))
        assert np.allclose(matmul(a, b), naive_matmul(a, b), atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_associativity(self, rng):
        for _ in range(10):
            a = rng.standard_normal((5, 4))
            b = rng.standard_normal((4, 6))
            c = rng.standard_normal((6, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.allclose(left, right, rtol=1e-10)


class TestQr:
    def test_identity_input(self):
        q = qr_orthonormal(np.eye(4))
        assert np.allclose(np.abs(q), np.eye(4), atol=1e-12)

    def test_orthonormality(self, rng):
        for shape in [(6, 6), (10, 4), (16, 16)]:
            q = qr_orthonormal(rng.standard_normal(shape))
            err = np.max(np.abs(q.T @ q - np.eye(shape[1])))
            assert err <= 1e-10

    def test_span_preserved(self, rng):
        a = rng.standard_normal((8, 3))
        q = qr_orthonormal(a)
        # projector onto span(Q) reproduces A
        assert np.allclose(q @ (q.T @ a), a, atol=1e-10)

    def test_norm_preservation(self, rng):
        q = qr_orthonormal(rng.standard_normal((16, 16)))
        x = rng.standard_normal(16)
        assert abs(np.linalg.norm(q.T @ x) - np.linalg.norm(x)) <= 1e-10

    def test_rank_deficiency_rejected(self):
        a = np.ones((5, 3))  # rank 1
        with pytest.raises(DegenerateInputError):
            qr_orthonormal(a)

    def test_wide_rejected(self, rng):
        with pytest.raises(ShapeError):
            qr_orthonormal(rng.standard_normal((3, 5)))


class TestSvd:
    def test_diagonal(self):
        _, s, _ = svd(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(s, [3.0, 2.0, 1.0])

    def test_orthogonal_has_unit_singular_values(self, rng):
        q = qr_orthonormal(rng.standard_normal((6, 6)))
        _, s, _ = svd(q)
        assert np.allclose(s, 1.0, atol=1e-12)

    def test_reconstruction(self, rng):
        a = rng.standard_normal((8, 5))
        u, s, v = svd(a)
        err = np.linalg.norm(u @ np.diag(s) @ v.T - a)
        assert err <= 1e-8 * np.linalg.norm(a)

    def test_factors_orthonormal_and_sorted(self, rng):
        a = rng.standard_normal((7, 4))
        u, s, v = svd(a)
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
        assert np.allclose(u.T @ u, np.eye(4), atol=1e-12)
        assert np.allclose(v.T @ v, np.eye(4), atol=1e-12)

    def test_orthogonal_invariance(self, rng):
        a = rng.standard_normal((6, 6))
        q1 = qr_orthonormal(rng.standard_normal((6, 6)))
        q2 = qr_orthonormal(rng.standard_normal((6, 6)))
        _, s, _ = svd(a)
        _, s2, _ = svd(q1 @ a @ q2)
        assert np.allclose(s, s2, atol=1e-8)


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(7)) == pytest.approx(1.0, abs=1e-9)

    def test_diagonal_max(self):
        a = np.diag([0.4, 0.3, 0.1])
        assert spectral_norm(a) == pytest.approx(0.4, abs=1e-9)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((4, 4))) == 0.0

    def test_against_svd(self, rng):
        for _ in range(5):
            a = rng.standard_normal((10, 10))
            _, s, _ = svd(a)
            est = spectral_norm(a, tol=1e-12, max_iter=5000)
            assert abs(est - s[0]) <= 1e-6 * s[0]

    def test_bounded_by_frobenius(self, rng):
        for _ in range(10):
            a = rng.standard_normal((6, 9))
            assert spectral_norm(a) <= np.linalg.norm(a) + 1e-12

    def test_rank_one_equals_frobenius(self, rng):
        u = rng.standard_normal(6)
        v = rng.standard_normal(4)
        a = np.outer(u, v)
        assert spectral_norm(a) == pytest.approx(np.linalg.norm(a), abs=1e-8)

    def test_max_iter_warning(self, rng):
        a = rng.standard_normal((12, 12))
        with pytest.warns(ConvergenceWarning):
            spectral_norm(a, tol=1e-15, max_iter=2)


class TestCenterColumns:
    def test_constant_column_zeroed(self):
        h = np.full((5, 2), 3.0)
        assert np.allclose(center_columns(h), 0.0)

    def test_idempotent(self, rng):
        h = center_columns(rng.standard_normal((6, 3)))
        assert np.allclose(center_columns(h), h, atol=1e-12)

    def test_against_explicit_centering_matrix(self, rng):
        h = rng.standard_normal((6, 3))
        n = h.shape[0]
        c = np.eye(n) - np.ones((n, n)) / n
        assert np.allclose(center_columns(h), c @ h, atol=1e-12)

    def test_single_row_rejected(self):
        with pytest.raises(DegenerateInputError):
            center_columns(np.ones((1, 3)))


class TestPcaTopk:
    def test_recovers_planted_subspace(self, rng):
        # activations concentrated on k known orthonormal directions
        d, k, n = 16, 4, 200
        basis = qr_orthonormal(rng.standard_normal((d, k)))
        h = rng.standard_normal((n, k)) @ basis.T
        got = pca_topk(h, k)
        # spanned subspaces match: projectors equal
        assert np.allclose(got @ got.T, basis @ basis.T, atol=1e-8)

    def test_full_k_is_orthonormal_rotation(self, rng):
        h = rng.standard_normal((50, 6))
        b = pca_topk(h, 6)
        assert np.allclose(b.T @ b, np.eye(6), atol=1e-10)
        assert np.allclose(b @ b.T, np.eye(6), atol=1e-10)

    def test_against_eigendecomposition_oracle(self, rng):
        from scipy.linalg import subspace_angles

        h = rng.standard_normal((200, 16))
        k = 4
        got = pca_topk(h, k)
        hc = h - h.mean(axis=0)
        evals, evecs = np.linalg.eigh(hc.T @ hc)
        oracle = evecs[:, np.argsort(evals)[::-1][:k]]
        assert np.all(subspace_angles(got, oracle) <= 1e-8)

    def test_orthonormal_output(self, rng):
        for _ in range(5):
            h = rng.standard_normal((40, 10))
            b = pca_topk(h, 3)
            assert np.max(np.abs(b.T @ b - np.eye(3))) <= 1e-10

    def test_tied_spectrum_warns(self, rng):
        # isotropic directions with identical singular values via orthogonal design
        h = np.kron(np.eye(4), np.ones((5, 1)))  # 20x4, equal column norms, orthogonal
        with pytest.warns(SubspaceAmbiguityWarning):
            pca_topk(h, 2)

    def test_k_out_of_range(self, rng):
        with pytest.raises(ShapeError):
            pca_topk(rng.standard_normal((5, 3)), 5)


class TestRidge:
    def test_exact_linear_map(self, rng):
        h = rng.standard_normal((50, 6))
        beta = rng.standard_normal((6, 2))
        z = h @ beta
        assert ridge_fit_r2(h, z, 0.0) == pytest.approx(1.0, abs=1e-10)

    def test_independent_targets_near_zero(self, rng):
        h = rng.standard_normal((1000, 4))
        z = rng.standard_normal((1000, 3))
        assert abs(ridge_fit_r2(h, z, 1e-3)) <= 0.1

    def test_constant_targets_rejected(self, rng):
        h = rng.standard_normal((20, 3))
        with pytest.raises(UndefinedMetricError):
            ridge_fit_r2(h, np.full((20, 2), 7.0), 1e-3)

    def test_against_direct_solve(self, rng):
        h = rng.standard_normal((40, 5))
        z = rng.standard_normal((40, 2))
        lam = 1e-3
        hc = h - h.mean(axis=0)
        zc = z - z.mean(axis=0)
        beta = np.linalg.solve(hc.T @ hc + lam * np.eye(5), hc.T @ zc)
        expected = 1.0 - np.sum((zc - hc @ beta) ** 2) / np.sum(zc**2)
        assert ridge_fit_r2(h, z, lam) == pytest.approx(expected, abs=1e-12)

    def test_row_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ridge_fit_r2(rng.standard_normal((10, 3)), rng.standard_normal((9, 2)), 1e-3)
