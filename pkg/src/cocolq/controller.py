"""Per-step covariance-constrained policy synthesis.

Each control step solves a small SDP over the joint steady second moment
``Sigma = [[Sigma_xx, Sigma_xu], [Sigma_ux, Sigma_uu]]`` of state and input:

    minimize    <diag(Q, R), Sigma>
    subject to  Sigma_xx = [A B] Sigma [A B]^T + W        (stationarity)
                Sigma_xx + T = W / (1 - alpha),  T >= 0   (contraction)
                Sigma >= 0

The slack form of the contraction constraint is equivalent, under
stationarity, to requiring the closed-loop covariance update to shrink
``Sigma_xx`` by the factor ``alpha``; it keeps the problem in standard
primal form with two PSD blocks of sizes ``d+p`` and ``d``. The policy is
``u = K x`` with ``K = Sigma_xu^T Sigma_xx^{-1}``.

Horizon lifting (``lift`` / ``coco_predict_step``) composes a window of
predicted systems into a single step whose stacked input matrix can regain
full row rank when individual ``B_t`` are rank deficient; the resulting gain
commits all H controls at the start of each window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import sdp
from .errors import (
    ExtractionError,
    InvalidInputError,
    LiftRankError,
    NotFullRowRankError,
    OutOfGuaranteeError,
    PresolveError,
    SolverError,
)
from .linalg import cholesky, cholesky_solve, condition_number, sym_eig
from .sdp import ConstraintRow, SdpProblem, SdpSettings, SdpSolution, SdpStatus
from .stability import contraction_params

__all__ = [
    "StepStatus",
    "RelaxAlpha",
    "CocoConfig",
    "PolicyStep",
    "LiftedSystem",
    "build_coco_sdp",
    "build_lqr_sdp",
    "build_feasible_point",
    "extract_gain",
    "coco_step",
    "lift",
    "coco_predict_step",
    "planned_controls",
    "EstimationTolerance",
    "estimation_tolerance",
    "gain_norm_bound",
]


class StepStatus(str, Enum):
    OK = "Ok"
    INFEASIBLE_AT_ALPHA = "InfeasibleAtAlpha"
    SOLVER_FAILURE = "SolverFailure"


@dataclass(frozen=True)
class RelaxAlpha:
    """Feasibility fallback: on an infeasible step, move alpha toward one by
    ``alpha <- 1 - growth * (1 - alpha)``, capped at ``max_alpha``."""

    max_alpha: float = 0.95
    growth: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.max_alpha < 1.0:
            raise InvalidInputError(
                f"max_alpha must lie in (0, 1), got {self.max_alpha}"
            )
        if not 0.0 < self.growth < 1.0:
            raise InvalidInputError(
                f"growth must lie in (0, 1), got {self.growth}"
            )

    def schedule(self, alpha: float) -> list[float]:
        """Alphas to try, starting at ``alpha`` and ending at ``max_alpha``."""
        out = [alpha]
        while out[-1] < self.max_alpha - 1e-12:
            nxt = min(self.max_alpha, 1.0 - self.growth * (1.0 - out[-1]))
            out.append(nxt)
        return out


@dataclass(frozen=True)
class CocoConfig:
    alpha: float
    fallback: RelaxAlpha | None = None
    settings: SdpSettings = field(default_factory=SdpSettings)

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidInputError(
                f"alpha must lie in [0, 1), got {self.alpha}"
            )


@dataclass
class PolicyStep:
    """Result of one synthesis step. ``K`` is the feedback gain (``u = K x``,
    shape p x d — or H*p x d for a lifted step); the sigma blocks are the
    optimizer's joint second moment. On non-Ok statuses the gain and blocks
    are None and ``alpha_used`` is the last alpha attempted."""

    K: np.ndarray | None
    sigma_xx: np.ndarray | None
    sigma_xu: np.ndarray | None
    sigma_uu: np.ndarray | None
    alpha_used: float
    status: StepStatus
    realizability_residual: float = math.nan
    solution: SdpSolution | None = None
    failure_metrics: "sdp.SolveMetrics | None" = None
    lifted: "LiftedSystem | None" = None


def _as_dyn(A, B, name_a="A", name_b="B") -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name_a} must be square, got shape {A.shape}")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise InvalidInputError(
            f"{name_b} must have {A.shape[0]} rows, got shape {B.shape}"
        )
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise InvalidInputError(f"{name_a}/{name_b} contain non-finite entries")
    return A, B


def _check_weight(M, n: int, name: str, positive: bool = False) -> np.ndarray:
    S = np.asarray(M, dtype=np.float64)
    if S.shape != (n, n):
        raise InvalidInputError(f"{name} must be {n}x{n}, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    scale = 1.0 + float(np.abs(S).max(initial=0.0))
    if float(np.abs(S - S.T).max(initial=0.0)) > 1e-8 * scale:
        raise InvalidInputError(f"{name} must be symmetric")
    S = 0.5 * (S + S.T)
    w, _ = sym_eig(S)
    if w[0] < -1e-10 * scale:
        raise InvalidInputError(f"{name} must be positive semidefinite")
    if positive and w[0] <= 1e-12 * scale:
        raise InvalidInputError(f"{name} must be positive definite")
    return S


def _sym_basis(n: int):
    """Orthogonal basis S_ij of symmetric n x n matrices, indexed i <= j."""
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = 0.5
                E[j, i] = 0.5
            yield i, j, E


def build_coco_sdp(A, B, Q, R, W, alpha: float,
                   settings: SdpSettings | None = None) -> SdpProblem:
    """Assemble the covariance-constrained step SDP for one system.

    Blocks: ``Sigma`` of size d+p and the contraction slack ``T`` of size d.
    Constraint rows come in symmetric-basis pairs: d(d+1)/2 stationarity
    rows and d(d+1)/2 slack-link rows.
    """
    A, B = _as_dyn(A, B)
    d, p = A.shape[0], B.shape[1]
    if not 0.0 <= float(alpha) < 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1), got {alpha}")
    Q = _check_weight(Q, d, "Q")
    R = _check_weight(R, p, "R")
    W = _check_weight(W, d, "W")
    C = np.hstack([A, B])  # d x (d+p)
    cap = W / (1.0 - float(alpha))

    obj_sigma = np.zeros((d + p, d + p))
    obj_sigma[:d, :d] = Q
    obj_sigma[d:, d:] = R
    constraints: list[ConstraintRow] = []
    zero_T = np.zeros((d, d))
    for i, j, E in _sym_basis(d):
        lhs = np.zeros((d + p, d + p))
        lhs[:d, :d] = E
        constraints.append(ConstraintRow(
            coeffs=(lhs - C.T @ E @ C, zero_T), rhs=float(W[i, j])
        ))
    for i, j, E in _sym_basis(d):
        lhs = np.zeros((d + p, d + p))
        lhs[:d, :d] = E
        constraints.append(ConstraintRow(
            coeffs=(lhs, E), rhs=float(cap[i, j])
        ))
    return SdpProblem(
        block_dims=(d + p, d),
        objective=(obj_sigma, np.zeros((d, d))),
        constraints=constraints,
        settings=settings or SdpSettings(),
    )


def build_lqr_sdp(A, B, Q, R, W,
                  settings: SdpSettings | None = None) -> SdpProblem:
    """Stationarity-only covariance SDP (no contraction constraint); its
    optimal gain is the steady-state LQR gain."""
    A, B = _as_dyn(A, B)
    d, p = A.shape[0], B.shape[1]
    Q = _check_weight(Q, d, "Q")
    R = _check_weight(R, p, "R")
    W = _check_weight(W, d, "W")
    C = np.hstack([A, B])
    obj = np.zeros((d + p, d + p))
    obj[:d, :d] = Q
    obj[d:, d:] = R
    constraints = []
    for i, j, E in _sym_basis(d):
        lhs = np.zeros((d + p, d + p))
        lhs[:d, :d] = E
        constraints.append(ConstraintRow(
            coeffs=(lhs - C.T @ E @ C,), rhs=float(W[i, j])
        ))
    return SdpProblem(
        block_dims=(d + p,),
        objective=(obj,),
        constraints=constraints,
        settings=settings or SdpSettings(),
    )


def build_feasible_point(A, B, W) -> np.ndarray:
    """Closed-form strictly stationary point: with ``G = B^T (B B^T)^{-1} A``,

        Sigma_0 = [[I], [-G]] W [[I], [-G]]^T

    satisfies the stationarity equalities with ``[A B] Sigma_0 [A B]^T = 0``
    (so its state block equals W exactly). Requires B to have full row rank.
    """
    A, B = _as_dyn(A, B)
    d = A.shape[0]
    W = _check_weight(W, d, "W")
    M = B @ B.T
    w, _ = sym_eig(M)
    if w[0] <= 1e-10 * (1.0 + float(w[-1])):
        raise NotFullRowRankError(
            "B does not have full row rank (B B^T is singular); "
            "no closed-form stationary point exists"
        )
    G = B.T @ cholesky_solve(cholesky(M), A)  # p x d
    J = np.vstack([np.eye(d), -G])
    S0 = J @ W @ J.T
    return 0.5 * (S0 + S0.T)


def extract_gain(sigma, d: int, p: int) -> tuple[np.ndarray, float]:
    """Gain and realizability residual from a joint second moment.

    ``K = Sigma_xu^T Sigma_xx^{-1}``; the residual is
    ``||Sigma_uu - K Sigma_xx K^T||_F``, which vanishes when the moment is
    realized exactly by the deterministic policy u = K x.
    """
    S = np.asarray(sigma, dtype=np.float64)
    if S.shape != (d + p, d + p):
        raise InvalidInputError(
            f"sigma must be {(d + p, d + p)}, got {S.shape}"
        )
    S = 0.5 * (S + S.T)
    sxx = S[:d, :d]
    sxu = S[:d, d:]
    suu = S[d:, d:]
    w, _ = sym_eig(sxx)
    if w[0] < 1e-12:
        raise ExtractionError(
            f"state covariance block is numerically singular "
            f"(min eigenvalue {w[0]:.3e}); cannot extract a gain"
        )
    K = cholesky_solve(cholesky(sxx), sxu).T  # p x d
    residual = float(np.linalg.norm(suu - K @ sxx @ K.T))
    return K, residual


def _zero_alpha_step(A, B, Q, R, W) -> PolicyStep | None:
    """Exact solution of the alpha = 0 step.

    At alpha = 0 the contraction cap pins ``Sigma_xx = W`` and stationarity
    then forces ``(A + B K) = 0``: the step is the deadbeat problem
    ``min tr(R K W K^T) s.t. B K = -A``, whose solution is the R-weighted
    pseudoinverse gain. (The SDP form of this step has no strictly feasible
    point, so it is solved in closed form rather than by the interior-point
    method.) Returns None when no deadbeat gain exists — the step is then
    infeasible at alpha = 0.
    """
    A, B = _as_dyn(A, B)
    d, p = A.shape[0], B.shape[1]
    Q = _check_weight(Q, d, "Q")
    R = _check_weight(R, p, "R", positive=True)
    W = _check_weight(W, d, "W")
    Y = cholesky_solve(cholesky(R), B.T)      # R^{-1} B^T, p x d
    M = B @ Y                                  # B R^{-1} B^T
    w, _ = sym_eig(0.5 * (M + M.T))
    if w[0] > 1e-10 * (1.0 + float(w[-1])):
        K = -Y @ cholesky_solve(cholesky(0.5 * (M + M.T)), A)
    else:
        # rank-deficient input: a deadbeat gain exists only when range(A)
        # lies inside range(B)
        K, *_ = np.linalg.lstsq(B, -A, rcond=None)
        if float(np.abs(A + B @ K).max(initial=0.0)) > 1e-8 * (
            1.0 + float(np.abs(A).max(initial=0.0))
        ):
            return None
    sigma_xx = W
    sigma_xu = W @ K.T
    sigma_uu = K @ W @ K.T
    return PolicyStep(
        K=K,
        sigma_xx=sigma_xx,
        sigma_xu=sigma_xu,
        sigma_uu=0.5 * (sigma_uu + sigma_uu.T),
        alpha_used=0.0,
        status=StepStatus.OK,
        realizability_residual=0.0,
        solution=None,
    )


def coco_step(A, B, Q, R, W, config: CocoConfig) -> PolicyStep:
    """One covariance-constrained synthesis step.

    Tries ``config.alpha`` first; on primal infeasibility walks the fallback
    schedule (if any). Solver breakdowns (iteration cap, numerical failure)
    are reported as ``SolverFailure`` with the solve metrics attached.
    The alpha = 0 boundary instance is dispatched to its closed form.
    """
    alphas = (config.fallback.schedule(config.alpha)
              if config.fallback is not None else [config.alpha])
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    p = np.asarray(B).shape[1]
    last_sol: SdpSolution | None = None
    for alpha in alphas:
        if alpha == 0.0:
            step = _zero_alpha_step(A, B, Q, R, W)
            if step is not None:
                return step
            continue
        problem = build_coco_sdp(A, B, Q, R, W, alpha, config.settings)
        try:
            sol = sdp.solve(problem)
        except PresolveError:
            # contradictory stationarity rows certify primal infeasibility
            # outright (e.g. a state row no input reaches that the dynamics
            # leave exactly in place); treat like any infeasible alpha
            continue
        except SolverError as exc:
            return PolicyStep(
                K=None, sigma_xx=None, sigma_xu=None, sigma_uu=None,
                alpha_used=alpha, status=StepStatus.SOLVER_FAILURE,
                failure_metrics=exc.metrics,
            )
        last_sol = sol
        if sol.status == SdpStatus.OPTIMAL:
            sigma = sol.primal[0]
            K, residual = extract_gain(sigma, d, p)
            return PolicyStep(
                K=K,
                sigma_xx=sigma[:d, :d],
                sigma_xu=sigma[:d, d:],
                sigma_uu=sigma[d:, d:],
                alpha_used=alpha,
                status=StepStatus.OK,
                realizability_residual=residual,
                solution=sol,
            )
        if sol.status != SdpStatus.PRIMAL_INFEASIBLE:
            return PolicyStep(
                K=None, sigma_xx=None, sigma_xu=None, sigma_uu=None,
                alpha_used=alpha, status=StepStatus.SOLVER_FAILURE,
                solution=sol,
            )
    return PolicyStep(
        K=None, sigma_xx=None, sigma_xu=None, sigma_uu=None,
        alpha_used=alphas[-1], status=StepStatus.INFEASIBLE_AT_ALPHA,
        solution=last_sol,
    )


@dataclass
class LiftedSystem:
    """Window of H systems composed into a single step.

    ``x_{t+H} = A_tilde x_t + B_tilde u_bar + w_bar`` where ``u_bar`` stacks
    the window's controls latest-first (``u_bar = [u_{t+H-1}; ...; u_t]``)
    and ``w_bar`` has covariance ``W_tilde``.
    """

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    R_tilde: np.ndarray
    W_tilde: np.ndarray
    H: int
    p: int  # raw input dimension per step

    def control_rows(self, offset: int) -> slice:
        """Rows of the lifted gain/input that hold ``u_{t+offset}``."""
        if not 0 <= offset < self.H:
            raise InvalidInputError(
                f"offset must lie in [0, {self.H}), got {offset}"
            )
        blk = self.H - 1 - offset
        return slice(blk * self.p, (blk + 1) * self.p)


def lift(window: Sequence, R, W) -> LiftedSystem:
    """Compose a prediction window ``[(A_t, B_t), ..., (A_{t+H-1},
    B_{t+H-1})]`` into one lifted step.

    The lifted disturbance covariance aggregates each in-window noise through
    its remaining transition product, so ``W_tilde >= W``.
    """
    if len(window) < 1:
        raise InvalidInputError("window must contain at least one system")
    mats = [_as_dyn(A, B) for A, B in window]
    d = mats[0][0].shape[0]
    p = mats[0][1].shape[1]
    for A, B in mats:
        if A.shape[0] != d or B.shape[1] != p:
            raise InvalidInputError("window systems must share dimensions")
    H = len(mats)
    R = _check_weight(R, p, "R")
    W = _check_weight(W, d, "W")

    # psi[l] = A_{t+H-1} ... A_{t+l+1} (empty product = I for l = H-1)
    psi = [np.eye(d) for _ in range(H)]
    for l in range(H - 2, -1, -1):
        psi[l] = psi[l + 1] @ mats[l + 1][0]
    A_tilde = psi[0] @ mats[0][0]

    B_tilde = np.zeros((d, H * p))
    for l in range(H):
        blk = H - 1 - l  # latest control first
        B_tilde[:, blk * p:(blk + 1) * p] = psi[l] @ mats[l][1]

    W_tilde = np.zeros((d, d))
    for l in range(H):
        W_tilde += psi[l] @ W @ psi[l].T
    W_tilde = 0.5 * (W_tilde + W_tilde.T)

    R_tilde = np.zeros((H * p, H * p))
    for j in range(H):
        R_tilde[j * p:(j + 1) * p, j * p:(j + 1) * p] = R

    return LiftedSystem(
        A_tilde=A_tilde, B_tilde=B_tilde, R_tilde=R_tilde,
        W_tilde=W_tilde, H=H, p=p,
    )


def coco_predict_step(window: Sequence, Q, R, W,
                      config: CocoConfig) -> PolicyStep:
    """Covariance-constrained step over a lifted prediction window.

    Solves the same step SDP on ``(A_tilde, B_tilde, Q, R_tilde, W_tilde)``
    and returns a lifted gain (shape H*p x d) that commits all H controls as
    values ``u_bar = K x_t``. With ``H = 1`` this reduces exactly to
    :func:`coco_step`. Raises :class:`LiftRankError` when the stacked input
    matrix still lacks full row rank (the horizon is too short to recover
    controllability).
    """
    lifted = lift(window, R, W)
    gram = lifted.B_tilde @ lifted.B_tilde.T
    w, _ = sym_eig(gram)
    if w[0] <= 1e-10 * (1.0 + float(w[-1])):
        raise LiftRankError(
            f"lifted input matrix is rank deficient over this window "
            f"(min eigenvalue of B~B~^T is {w[0]:.3e}); "
            f"increase the horizon H"
        )
    step = coco_step(lifted.A_tilde, lifted.B_tilde, Q, lifted.R_tilde,
                     lifted.W_tilde, config)
    step.lifted = lifted
    return step


def planned_controls(step: PolicyStep, x) -> np.ndarray:
    """Controls committed by a lifted step at window start: row ``l`` holds
    ``u_{t+l}`` for the window beginning at t."""
    if step.lifted is None or step.K is None:
        raise InvalidInputError("planned_controls requires an Ok lifted step")
    ubar = step.K @ np.asarray(x, dtype=np.float64)
    out = np.empty((step.lifted.H, step.lifted.p))
    for offset in range(step.lifted.H):
        out[offset] = ubar[step.lifted.control_rows(offset)]
    return out


@dataclass(frozen=True)
class EstimationTolerance:
    """How much model error a covariance-constrained run can absorb.

    ``rhs(delta)`` is the admissible per-step estimation error
    ``delta gamma / (kappa (1 + k_max))`` for a target degradation
    ``delta <= delta_max``; ``rho_prime(delta)`` is the degraded decay rate.
    """

    alpha: float
    kappa: float
    gamma: float
    rho: float
    k_max: float
    delta_max: float

    def rhs(self, delta: float) -> float:
        return float(delta) * self.gamma / (self.kappa * (1.0 + self.k_max))

    def rho_prime(self, delta: float) -> float:
        if not 0.0 <= float(delta) <= self.delta_max + 1e-12:
            raise InvalidInputError(
                f"delta must lie in [0, {self.delta_max:.6g}], got {delta}"
            )
        return (1.0 - (1.0 - float(delta)) * self.gamma) / (1.0 - self.gamma) \
            * self.rho


def estimation_tolerance(alpha: float, W, k_max: float) -> EstimationTolerance:
    """Estimation-error tolerance constants; defined for ``alpha < 1/2``."""
    params = contraction_params(alpha, W)  # raises OutOfGuaranteeError
    sa = math.sqrt(params.alpha)
    delta_max = (math.sqrt(1.0 - params.alpha) - sa) / (1.0 - sa)
    return EstimationTolerance(
        alpha=params.alpha,
        kappa=params.kappa,
        gamma=params.gamma,
        rho=params.rho,
        k_max=float(k_max),
        delta_max=delta_max,
    )


def gain_norm_bound(alpha: float, W, R, sigma_a_bar: float,
                    sigma_b_bar: float, sigma_b_min: float) -> float:
    """Upper bound on the synthesized gain norm over any system whose
    ``||A|| <= sigma_a_bar`` and whose input matrix has singular values in
    ``[sigma_b_min, sigma_b_bar]``."""
    if sigma_b_min <= 0:
        raise InvalidInputError(
            f"sigma_b_min must be positive, got {sigma_b_min}"
        )
    params = contraction_params(alpha, W)
    kappa_r = condition_number(R)
    return (
        kappa_r * (float(sigma_b_bar) / float(sigma_b_min) ** 2)
        * (params.kappa * (1.0 - params.gamma) + float(sigma_a_bar))
    )
