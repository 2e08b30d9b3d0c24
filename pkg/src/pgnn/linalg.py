"""Dense linear algebra kernel: products, decompositions, subspaces, ridge probes.

Everything operates on plain 2-D float64 numpy arrays (row-major). Matrices
stay small here (at most a few thousand rows), so LAPACK via numpy covers the
decompositions; the spectral norm is an explicit power iteration because its
convergence behaviour is part of the contract.
"""

import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ConvergenceWarning,
    DegenerateInputError,
    NumericalFailureError,
    ShapeError,
    SubspaceAmbiguityWarning,
    UndefinedMetricError,
)

Matrix = np.ndarray
Vector = np.ndarray


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Validate and return `a` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalFailureError(f"{name} contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} x {b.shape}")
    return a @ b


def qr_orthonormal(a: Matrix) -> Matrix:
    """Orthonormal basis for the column span of a full-column-rank matrix.

    Householder QR (LAPACK); raises on rank deficiency so callers never get a
    silently padded basis.
    """
    a = as_matrix(a, "qr input")
    if a.shape[0] < a.shape[1]:
        raise ShapeError(f"qr input must be square or tall, got shape {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    if np.any(diag < 1e-12):
        raise DegenerateInputError(
            f"rank-deficient input: |R| diagonal min {diag.min():.3e} < 1e-12"
        )
    return q


def svd(a: Matrix) -> tuple[Matrix, Vector, Matrix]:
    """Thin SVD. Returns (U, s, V) with A = U @ diag(s) @ V.T, s descending."""
    a = as_matrix(a, "svd input")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"svd did not converge: {exc}") from exc
    return u, s, vh.T


def spectral_norm(a: Matrix, tol: float = 1e-9, max_iter: int = 1000) -> float:
    """Largest singular value via power iteration on A^T A.

    Starts from the normalized all-ones vector so repeated runs are identical
    without touching any RNG. A zero matrix returns 0.0; hitting `max_iter`
    returns the current estimate and emits a ConvergenceWarning.
    """
    a = as_matrix(a, "spectral_norm input")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    n = a.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    sigma = 0.0
    for _ in range(max_iter):
        w = a @ v
        sigma_new = float(np.linalg.norm(w))
        if sigma_new == 0.0:
            return 0.0
        u = a.T @ w
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            return sigma_new
        v = u / u_norm
        if abs(sigma_new - sigma) <= tol * sigma_new:
            return sigma_new
        sigma = sigma_new
    warnings.warn(
        f"power iteration hit max_iter={max_iter} (last estimate {sigma:.6e})",
        ConvergenceWarning,
        stacklevel=2,
    )
    return sigma


def center_columns(h: Matrix) -> Matrix:
    """Subtract each column's mean; equals C @ H for C = I - (1/n) 11^T."""
    h = as_matrix(h, "centering input")
    if h.shape[0] < 2:
        raise DegenerateInputError(f"need at least 2 rows to center, got {h.shape[0]}")
    return h - h.mean(axis=0, keepdims=True)


def pca_topk(h: Matrix, k: int) -> Matrix:
    """Orthonormal d x k basis of the top-k principal directions of H's columns.

    Centers internally. If the spectrum is tied at the cut (s_k == s_{k+1}
    within 1e-12) the basis is still returned, ties broken by index order,
    with a SubspaceAmbiguityWarning.
    """
    h = as_matrix(h, "pca input")
    n, d = h.shape
    if not 1 <= k <= min(n - 1, d):
        raise ShapeError(f"k={k} out of range for {n}x{d} activations (max {min(n - 1, d)})")
    _, s, v = svd(center_columns(h))
    if k < s.size and abs(s[k - 1] - s[k]) <= 1e-12:
        warnings.warn(
            f"singular values {k - 1} and {k} tied ({s[k - 1]:.6e}); subspace cut is ambiguous",
            SubspaceAmbiguityWarning,
            stacklevel=2,
        )
    return v[:, :k]


def ridge_fit_r2(h: Matrix, z: Matrix, lam: float) -> float:
    """R^2 of a ridge regression from H to Z, both column-centered first.

    Solves (H^T H + lam I) beta = H^T Z by Cholesky and returns
    1 - |Z - H beta|^2_F / |Z|^2_F (clipped to at most 1.0).
    """
    h = as_matrix(h, "ridge features")
    z = as_matrix(z, "ridge targets")
    if h.shape[0] != z.shape[0]:
        raise ShapeError(f"row counts differ: features {h.shape} vs targets {z.shape}")
    if lam < 0:
        raise ValueError(f"ridge lambda must be nonnegative, got {lam}")
    hc = center_columns(h)
    zc = center_columns(z)
    denom = float(np.sum(zc**2))
    if denom <= 1e-300:
        raise UndefinedMetricError("targets have zero variance; R^2 undefined")
    gram = hc.T @ hc + lam * np.eye(h.shape[1])
    try:
        beta = cho_solve(cho_factor(gram), hc.T @ zc)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"ridge normal equations not positive definite: {exc}") from exc
    resid = zc - hc @ beta
    r2 = 1.0 - float(np.sum(resid**2)) / denom
    return min(r2, 1.0)
