"""Pure-Python reference implementation of the dense kernels.

Same algorithms and calling conventions as the compiled extension
(``cocolq._kernels``); this module is selected automatically when the
extension is unavailable, or explicitly via ``COCOLQ_PURE_PYTHON=1``.

All kernels operate on small dense float64 matrices:

- ``jacobi_eig``        cyclic two-sided Jacobi eigendecomposition (symmetric)
- ``jacobi_svd``        one-sided Jacobi SVD (square input)
- ``chol_factor``       lower-triangular Cholesky factor
- ``chol_solve_factor`` solve ``L L^T X = B`` given the factor
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_MAX_SWEEPS = 60
_EIG_TOL = 5e-15
_SVD_TOL = 1e-15


def _rotation(app: float, aqq: float, apq: float) -> tuple[float, float]:
    """Jacobi rotation (c, s) annihilating the (p, q) coupling."""
    theta = 0.5 * (aqq - app) / apq
    if abs(theta) > 1e154:
        t = 0.5 / theta
    else:
        t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(1.0 + theta * theta))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, t * c


def jacobi_eig(S):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(w, V)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvector columns ``V`` such that ``S = V diag(w) V^T``.
    """
    A = np.array(S, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.reshape(1).copy(), V
    frob = math.sqrt(float((A * A).sum()))
    if frob == 0.0:
        return np.zeros(n), V
    for _ in range(_MAX_SWEEPS):
        off = math.sqrt(2.0 * float((np.triu(A, 1) ** 2).sum()))
        if off <= _EIG_TOL * frob:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                c, s = _rotation(A[p, p], A[q, q], apq)
                rowp = A[p, :].copy()
                rowq = A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(V[:, order])


def jacobi_svd(M):
    """One-sided Jacobi SVD of a square matrix.

    Returns ``(U, s, V)`` with ``M = U diag(s) V^T``, singular values
    descending. Intended for well-conditioned factors (scaling kernels);
    zero columns are guarded but not refined.
    """
    A = np.array(M, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(A[:, p] @ A[:, p])
                aqq = float(A[:, q] @ A[:, q])
                apq = float(A[:, p] @ A[:, q])
                denom = math.sqrt(app * aqq)
                if denom <= 0.0 or abs(apq) <= _SVD_TOL * denom:
                    continue
                rotated = True
                c, s = _rotation(app, aqq, apq)
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if not rotated:
            break
    s = np.sqrt((A * A).sum(axis=0))
    U = np.empty_like(A)
    for j in range(n):
        if s[j] > 1e-300:
            U[:, j] = A[:, j] / s[j]
        else:
            U[:, j] = 0.0
            U[j, j] = 1.0
    order = np.argsort(-s, kind="stable")
    return (
        np.ascontiguousarray(U[:, order]),
        s[order],
        np.ascontiguousarray(V[:, order]),
    )


def chol_factor(S):
    """Lower-triangular L with ``L L^T = S``; ValueError if not positive
    definite (message names the failing pivot)."""
    A = np.array(S, dtype=np.float64, copy=True)
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = A[j, j] - float(L[j, :j] @ L[j, :j])
        if not (d > 0.0) or not math.isfinite(d):
            raise ValueError(f"matrix is not positive definite (pivot {j})")
        L[j, j] = math.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def chol_solve_factor(L, B):
    """Solve ``L L^T X = B`` for X given the lower Cholesky factor L."""
    X = np.array(B, dtype=np.float64, copy=True)
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    n = L.shape[0]
    for i in range(n):
        X[i] = (X[i] - L[i, :i] @ X[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        X[i] = (X[i] - L[i + 1 :, i] @ X[i + 1 :]) / L[i, i]
    return X[:, 0] if vec else X
