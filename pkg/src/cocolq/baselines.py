"""Riccati-based reference controllers.

These are the comparison arms for the covariance-constrained policy: the
certainty-equivalent LQ regulator frozen at the current system, the
finite-horizon receding/blockwise controller, and the non-causal offline
optimum computed on the full realized system sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NotStabilizableError
from .linalg import cholesky, cholesky_solve

__all__ = [
    "RiccatiResult",
    "dare",
    "naive_lti_step",
    "offline_optimal",
    "h_horizon_step",
]


@dataclass
class RiccatiResult:
    P: np.ndarray
    K: np.ndarray  # u = K x
    iterations: int
    residual: float


def _check_lq(A, B, Q, R):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d):
        raise InvalidInputError(f"A must be square, got {A.shape}")
    if B.ndim != 2 or B.shape[0] != d:
        raise InvalidInputError(f"B must have {d} rows, got {B.shape}")
    p = B.shape[1]
    if Q.shape != (d, d) or R.shape != (p, p):
        raise InvalidInputError(
            f"Q must be {d}x{d} and R {p}x{p}, got {Q.shape} and {R.shape}"
        )
    for name, M in (("A", A), ("B", B), ("Q", Q), ("R", R)):
        if not np.all(np.isfinite(M)):
            raise InvalidInputError(f"{name} contains non-finite entries")
    return A, B, 0.5 * (Q + Q.T), 0.5 * (R + R.T)


def _riccati_rhs(A, B, Q, R, P):
    """One value-iteration update T(P) and the associated gain."""
    BtP = B.T @ P
    M = R + BtP @ B
    L = cholesky(M)
    K = -cholesky_solve(L, BtP @ A)  # p x d
    Pn = Q + A.T @ P @ (A + B @ K)
    return 0.5 * (Pn + Pn.T), K


def dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000,
         damping: float = 1.0) -> RiccatiResult:
    """Stabilizing solution of the discrete algebraic Riccati equation by
    (optionally damped) value iteration from P = Q.

    Divergence — norm blowup or a residual that stops decreasing, both signs
    of an unstabilizable pair — raises :class:`NotStabilizableError`.
    Returns ``P``, the gain ``K`` (u = K x), the iteration count, and the
    final fixed-point residual, which satisfies
    ``residual <= 1e-9 (1 + ||P||_F)``.
    """
    A, B, Q, R = _check_lq(A, B, Q, R)
    if not 0.0 < damping <= 1.0:
        raise InvalidInputError(f"damping must lie in (0, 1], got {damping}")
    P = Q.copy()
    q_scale = 1.0 + float(np.linalg.norm(Q))
    stall_resid = np.inf
    K = np.zeros((B.shape[1], A.shape[0]))
    for it in range(1, max_iter + 1):
        Pn, K = _riccati_rhs(A, B, Q, R, P)
        if damping < 1.0:
            Pn = (1.0 - damping) * P + damping * Pn
        resid = float(np.linalg.norm(Pn - P))
        P = Pn
        if resid <= tol * (1.0 + float(np.linalg.norm(P))):
            final = float(np.linalg.norm(_riccati_rhs(A, B, Q, R, P)[0] - P))
            return RiccatiResult(P=P, K=K, iterations=it, residual=final)
        if float(np.abs(P).max()) > 1e12 * q_scale:
            raise NotStabilizableError(
                "Riccati iteration diverged (norm blowup); "
                "(A, B) is not stabilizable"
            )
        if it % 100 == 0:
            # marginal uncontrollable modes make the residual plateau
            if it >= 300 and resid >= 0.99 * stall_resid:
                raise NotStabilizableError(
                    "Riccati iteration stalled without converging; "
                    "(A, B) is not stabilizable"
                )
            stall_resid = resid
    raise NotStabilizableError(
        f"Riccati iteration hit the cap ({max_iter}) without converging"
    )


def naive_lti_step(A, B, Q, R) -> np.ndarray:
    """Certainty-equivalent LQ gain for the system frozen at the current
    step (the time-invariant baseline applied pointwise)."""
    return dare(A, B, Q, R).K


def offline_optimal(systems: Sequence, Q, R) -> list[np.ndarray]:
    """Non-causal finite-horizon optimum over the full realized sequence.

    ``systems`` holds ``(A_t, B_t)`` for t = 1..T; the backward recursion
    uses terminal cost Q. Returns the time-varying gains ``K_1..K_T``.
    """
    if len(systems) == 0:
        raise InvalidInputError("systems must be non-empty")
    mats = [(np.asarray(A, float), np.asarray(B, float)) for A, B in systems]
    d = mats[0][0].shape[0]
    _, _, Q, R = _check_lq(mats[0][0], mats[0][1], Q, R)
    P = Q.copy()
    gains: list[np.ndarray] = []
    for A, B in reversed(mats):
        if A.shape != (d, d) or B.shape[0] != d:
            raise InvalidInputError("systems must share the state dimension")
        P, K = _riccati_rhs(A, B, Q, R, P)
        gains.append(K)
    gains.reverse()
    return gains


def h_horizon_step(window: Sequence, Q, R) -> list[np.ndarray]:
    """Finite-horizon gains over a prediction window with terminal cost Q.

    ``window`` holds ``(A_t, B_t), ..., (A_{t+H-1}, B_{t+H-1})``; the
    returned list has one gain per in-window step, first gain first. With
    H = 1 this is the one-step certainty-equivalent gain.
    """
    if len(window) == 0:
        raise InvalidInputError("window must be non-empty")
    return offline_optimal(window, Q, R)
