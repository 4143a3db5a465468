"""Dense symmetric linear algebra used throughout the package.

Thin, validated wrappers around the kernel backend (compiled extension or
pure-Python fallback; see :mod:`cocolq._backend`). All functions take
array-likes, operate in float64, and raise :class:`~cocolq.errors`
exceptions on contract violations rather than returning garbage.
"""

from __future__ import annotations

import math

import numpy as np

from . import _backend
from .errors import (
    InvalidInputError,
    NotPdError,
    NotPsdError,
    UnstableMatrixError,
)

__all__ = [
    "sym_eig",
    "psd_sqrt",
    "spectral_norm",
    "condition_number",
    "cholesky",
    "cholesky_solve",
    "solve_spd",
    "lyapunov_discrete",
    "svec",
    "smat",
    "svec_dim",
]


def _as_matrix(M, name: str) -> np.ndarray:
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d array, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return A


def _as_square(M, name: str) -> np.ndarray:
    A = _as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {A.shape}")
    return A


def _as_symmetric(M, name: str) -> np.ndarray:
    A = _as_square(M, name)
    scale = 1.0 + float(np.abs(A).max(initial=0.0))
    if float(np.abs(A - A.T).max(initial=0.0)) > 1e-8 * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def sym_eig(S) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with eigenvalues ascending and orthonormal columns,
    ``S = V @ diag(w) @ V.T``. Eigenvector signs are fixed so the largest-
    magnitude component of each column is positive, making the output
    deterministic.
    """
    A = _as_symmetric(S, "S")
    w, V = _backend.jacobi_eig(A)
    for j in range(V.shape[1]):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0.0:
            V[:, j] = -V[:, j]
    return w, V


def psd_sqrt(S) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Eigenvalues in ``[-floor, 0)`` are clamped to zero, where ``floor`` is
    ``1e-10 * (1 + ||S||_F)``; anything below that raises
    :class:`NotPsdError`.
    """
    A = _as_symmetric(S, "S")
    w, V = sym_eig(A)
    floor = 1e-10 * (1.0 + float(np.linalg.norm(A)))
    if w[0] < -floor:
        raise NotPsdError(
            f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})"
        )
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def spectral_norm(M) -> float:
    """Largest singular value of a (possibly rectangular) matrix."""
    A = _as_matrix(M, "M")
    if A.size == 0:
        return 0.0
    # Gram route keeps everything in the symmetric eigensolver.
    if A.shape[0] >= A.shape[1]:
        G = A.T @ A
    else:
        G = A @ A.T
    w, _ = _backend.jacobi_eig(0.5 * (G + G.T))
    return math.sqrt(max(float(w[-1]), 0.0))


def condition_number(S) -> float:
    """``lambda_max/lambda_min`` of a symmetric positive definite matrix."""
    A = _as_symmetric(S, "S")
    w, _ = _backend.jacobi_eig(A)
    scale = 1.0 + float(np.abs(w).max(initial=0.0))
    if w[0] <= 1e-14 * scale:
        raise NotPdError(
            f"matrix is not positive definite (min eigenvalue {w[0]:.3e})"
        )
    return float(w[-1] / w[0])


def cholesky(S) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T = S`` (S symmetric PD)."""
    A = _as_symmetric(S, "S")
    try:
        return _backend.chol_factor(A)
    except ValueError as exc:
        raise NotPdError(str(exc)) from exc


def cholesky_solve(L, B) -> np.ndarray:
    """Solve ``L L^T X = B`` given a lower Cholesky factor."""
    return _backend.chol_solve_factor(np.asarray(L, dtype=np.float64), B)


def solve_spd(S, B) -> np.ndarray:
    """Solve ``S X = B`` for symmetric positive definite ``S``."""
    return cholesky_solve(cholesky(S), B)


def lyapunov_discrete(M, C, max_doublings: int = 100) -> np.ndarray:
    """Solve the discrete Lyapunov equation ``X = M X M^T + C``.

    Uses the doubling iteration ``X <- X + M X M^T, M <- M^2`` (partial sums
    of ``sum_j M^j C M^j^T``), which converges quadratically for any M with
    spectral radius below one. Raises :class:`UnstableMatrixError` when the
    iteration cap is reached without meeting the residual tolerance
    ``1e-9 * (1 + ||C||_F)``.
    """
    A = _as_square(M, "M")
    Q = _as_symmetric(C, "C")
    X = Q.copy()
    Mk = A.copy()
    tol = 1e-9 * (1.0 + float(np.linalg.norm(Q)))
    for _ in range(max_doublings):
        X = X + Mk @ X @ Mk.T
        X = 0.5 * (X + X.T)
        Mk = Mk @ Mk
        if not np.all(np.isfinite(X)) or float(np.abs(X).max(initial=0.0)) > 1e200:
            raise UnstableMatrixError(
                "Lyapunov iteration diverged; M has spectral radius >= 1"
            )
        if float(np.abs(Mk).max(initial=0.0)) ** 2 * (
            1.0 + float(np.abs(X).max(initial=0.0))
        ) < 1e-18:
            break
    residual = float(np.linalg.norm(X - A @ X @ A.T - Q))
    if residual > tol:
        raise UnstableMatrixError(
            f"Lyapunov iteration did not converge (residual {residual:.3e}); "
            "M has spectral radius >= 1"
        )
    return X


def svec_dim(n: int) -> int:
    """Length of the scaled upper-triangular vectorization of an n x n block."""
    return n * (n + 1) // 2


def svec(S) -> np.ndarray:
    """Scaled vectorization of a symmetric matrix.

    Stacks the upper triangle row-major with off-diagonal entries multiplied
    by sqrt(2), so that ``svec(A) @ svec(B) == <A, B>_F`` exactly.
    """
    A = np.asarray(S, dtype=np.float64)
    n = A.shape[0]
    iu, ju = np.triu_indices(n)
    v = A[iu, ju].copy()
    v[iu != ju] *= math.sqrt(2.0)
    return v


def smat(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    x = np.asarray(v, dtype=np.float64)
    if n is None:
        n = int(round((math.sqrt(8.0 * x.size + 1.0) - 1.0) / 2.0))
    if svec_dim(n) != x.size:
        raise InvalidInputError(
            f"vector of length {x.size} is not a valid svec of an {n}x{n} block"
        )
    A = np.zeros((n, n))
    iu, ju = np.triu_indices(n)
    vals = x.copy()
    off = iu != ju
    vals[off] /= math.sqrt(2.0)
    A[iu, ju] = vals
    A[ju, iu] = vals
    return A
