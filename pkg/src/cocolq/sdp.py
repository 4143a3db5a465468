"""Block-diagonal standard-form semidefinite programming.

Problems are

    minimize    sum_b <C_b, X_b>
    subject to  sum_b <F_kb, X_b> = rhs_k   (k = 0..m-1)
                X_b positive semidefinite,

with symmetric data per block. The solver is a homogeneous self-dual
embedding interior-point method: Nesterov-Todd scaling computed from the
Cholesky factors of the iterates via a one-sided Jacobi SVD, a Mehrotra
predictor-corrector step, fraction-to-boundary 0.99, and infeasibility
detection through the tau/kappa ratio of the embedding. Every solve is cold:
there is no warm-start state, so repeated solves of the same data are
bitwise identical.

Presolve removes linearly dependent constraint rows (pivoted QR); dependent
rows with contradictory right-hand sides raise :class:`PresolveError` naming
the rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Sequence

import numpy as np
import scipy.linalg

from . import _backend
from .errors import InvalidInputError, PresolveError, SolverError
from .linalg import smat, svec, svec_dim

__all__ = [
    "SdpSettings",
    "SdpStatus",
    "ConstraintRow",
    "SdpProblem",
    "SolveMetrics",
    "SdpSolution",
    "VerifyReport",
    "solve",
    "verify",
    "dump_problem",
    "load_problem",
]


# --------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class SdpSettings:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200


class SdpStatus(str, Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class ConstraintRow:
    """One linear equality: ``sum_b <coeffs[b], X_b> = rhs``."""

    coeffs: tuple[np.ndarray, ...]
    rhs: float


@dataclass
class SdpProblem:
    block_dims: tuple[int, ...]
    objective: tuple[np.ndarray, ...]
    constraints: list[ConstraintRow]
    settings: SdpSettings = field(default_factory=SdpSettings)

    def validate(self) -> None:
        if not self.block_dims or any(int(d) <= 0 for d in self.block_dims):
            raise InvalidInputError("invalid problem: block_dims must be positive")
        if len(self.objective) != len(self.block_dims):
            raise InvalidInputError(
                "invalid problem: objective has "
                f"{len(self.objective)} blocks, expected {len(self.block_dims)}"
            )
        for b, (d, C) in enumerate(zip(self.block_dims, self.objective)):
            _check_block(C, d, f"objective block {b}")
        for k, row in enumerate(self.constraints):
            if len(row.coeffs) != len(self.block_dims):
                raise InvalidInputError(
                    f"invalid problem: constraint {k} has {len(row.coeffs)} "
                    f"blocks, expected {len(self.block_dims)}"
                )
            for b, (d, F) in enumerate(zip(self.block_dims, row.coeffs)):
                _check_block(F, d, f"constraint {k} block {b}")
            if not math.isfinite(float(row.rhs)):
                raise InvalidInputError(f"invalid problem: constraint {k} rhs")


def _check_block(M, d: int, what: str) -> None:
    A = np.asarray(M, dtype=np.float64)
    if A.shape != (d, d):
        raise InvalidInputError(
            f"invalid problem: {what} has shape {A.shape}, expected {(d, d)}"
        )
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"invalid problem: {what} has non-finite entries")
    scale = 1.0 + float(np.abs(A).max(initial=0.0))
    if float(np.abs(A - A.T).max(initial=0.0)) > 1e-8 * scale:
        raise InvalidInputError(f"invalid problem: {what} is not symmetric")


@dataclass
class SolveMetrics:
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    tau: float = math.nan
    kappa: float = math.nan
    dropped_rows: tuple[int, ...] = ()


@dataclass
class SdpSolution:
    status: SdpStatus
    primal: tuple[np.ndarray, ...] | None
    dual: np.ndarray | None
    dual_slack: tuple[np.ndarray, ...] | None
    objective_value: float | None
    metrics: SolveMetrics


@dataclass
class VerifyReport:
    primal_residual: float
    dual_residual: float
    gap: float
    objective_value: float
    min_eigenvalues: tuple[float, ...]
    complementarity: tuple[float, ...]


# --------------------------------------------------------------------------
# stacking / presolve


def _stack(problem: SdpProblem):
    dims = tuple(int(d) for d in problem.block_dims)
    slices = []
    off = 0
    for d in dims:
        slices.append(slice(off, off + svec_dim(d)))
        off += svec_dim(d)
    ntot = off
    c = np.concatenate(
        [svec(0.5 * (np.asarray(C, float) + np.asarray(C, float).T))
         for C in problem.objective]
    ) if ntot else np.zeros(0)
    m = len(problem.constraints)
    A = np.zeros((m, ntot))
    b = np.zeros(m)
    F_mats: list[list[np.ndarray]] = []
    for k, row in enumerate(problem.constraints):
        mats = []
        for bidx, F in enumerate(row.coeffs):
            Fb = np.asarray(F, dtype=np.float64)
            Fb = 0.5 * (Fb + Fb.T)
            mats.append(Fb)
            A[k, slices[bidx]] = svec(Fb)
        F_mats.append(mats)
        b[k] = float(row.rhs)
    return dims, slices, A, b, c, F_mats


def _presolve(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    """Select a maximal independent subset of rows; complain if a dependent
    row's right-hand side contradicts the rows it depends on."""
    m = A.shape[0]
    if m == 0:
        return np.zeros(0, dtype=int), ()
    scale = float(np.abs(A).max(initial=0.0))
    if scale == 0.0:
        rank = 0
        piv = np.arange(m)
    else:
        _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int((diag > 1e-12 * diag[0]).sum()) if diag.size and diag[0] > 0 else 0
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    if drop.size:
        if rank == 0:
            bad = np.abs(b[drop]) > 1e-8 * (1.0 + np.abs(b[drop]))
        else:
            Z, *_ = np.linalg.lstsq(A[keep].T, A[drop].T, rcond=None)
            b_pred = Z.T @ b[keep]
            bad = np.abs(b[drop] - b_pred) > 1e-8 * (1.0 + np.abs(b[drop]))
        if bool(bad.any()):
            rows = tuple(int(r) for r in drop[bad])
            raise PresolveError(
                "constraint rows "
                + ", ".join(str(r) for r in rows)
                + " are linearly dependent on earlier rows with inconsistent "
                "right-hand sides",
                rows=rows,
            )
    return keep, tuple(int(r) for r in drop)


# --------------------------------------------------------------------------
# interior-point core


def _chol_jitter(M: np.ndarray, what: str, metrics=None) -> np.ndarray:
    jitter = 0.0
    base = float(np.trace(M)) / max(M.shape[0], 1)
    for attempt in range(4):
        try:
            if jitter == 0.0:
                return _backend.chol_factor(M)
            return _backend.chol_factor(M + jitter * np.eye(M.shape[0]))
        except ValueError:
            jitter = max(jitter * 100.0, 1e-13 * max(base, 1.0))
    raise SolverError(f"{what} lost positive definiteness", metrics=metrics)


def _inf_norm(v: np.ndarray) -> float:
    return float(np.abs(v).max(initial=0.0))


def solve(problem: SdpProblem) -> SdpSolution:
    """Solve the SDP; statuses Optimal / PrimalInfeasible / DualInfeasible /
    MaxIterations. See module docstring for the method."""
    problem.validate()
    st = problem.settings
    dims, slices, A_all, b_all, c, F_mats = _stack(problem)
    keep, dropped = _presolve(A_all, b_all)
    A = A_all[keep]
    b = b_all[keep]
    m = A.shape[0]
    m_all = A_all.shape[0]
    nu = sum(dims)

    X = [np.eye(d) for d in dims]
    S = [np.eye(d) for d in dims]
    y = np.zeros(m)
    tau = 1.0
    kappa = 1.0

    def stack_blocks(blocks):
        return np.concatenate([svec(Bb) for Bb in blocks])

    def metrics_at(x, yv, s, iters) -> SolveMetrics:
        # residuals of the tau-scaled point against the FULL row set
        y_full = np.zeros(m_all)
        y_full[keep] = yv
        pres = _inf_norm(A_all @ x - b_all)
        dres = _inf_norm(c - A_all.T @ y_full - s)
        pobj = float(c @ x)
        dobj = float(b_all @ y_full)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return SolveMetrics(
            gap=gap,
            primal_residual=pres,
            dual_residual=dres,
            iterations=iters,
            tau=tau,
            kappa=kappa,
            dropped_rows=dropped,
        )

    def expand_dual(yv: np.ndarray) -> np.ndarray:
        y_full = np.zeros(m_all)
        y_full[keep] = yv
        return y_full

    iters = 0
    for iters in range(st.max_iter + 1):
        x = stack_blocks(X)
        s = stack_blocks(S)
        rP = A @ x - b * tau
        rD = -A.T @ y + c * tau - s
        rG = float(b @ y - c @ x) - kappa
        mu = (float(x @ s) + tau * kappa) / (nu + 1.0)

        # -- termination on the tau-scaled point
        xs = x / tau
        ys = y / tau
        ss = s / tau
        y_full = expand_dual(ys)
        pres = _inf_norm(A_all @ xs - b_all)
        dres = _inf_norm(c - A_all.T @ y_full - ss)
        pobj = float(c @ xs)
        dobj = float(b_all @ y_full)
        gap_rel = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if pres <= st.tol_feas and dres <= st.tol_feas and gap_rel <= st.tol_gap:
            Xs = [Xb / tau for Xb in X]
            Ss = [Sb / tau for Sb in S]
            return SdpSolution(
                status=SdpStatus.OPTIMAL,
                primal=tuple(Xs),
                dual=y_full,
                dual_slack=tuple(Ss),
                objective_value=pobj,
                metrics=metrics_at(xs, ys, ss, iters),
            )

        # -- infeasibility via the embedding ray. A candidate ray must carry
        # significant objective improvement relative to its own magnitude;
        # otherwise tiny tau/kappa with vanishing iterates (the hard case of
        # the embedding) would produce ratio-of-noise certificates.
        if iters >= 10 and tau <= 1e-8 * kappa:
            by = float(b @ y)
            cx = float(c @ x)
            y_scale = max(_inf_norm(y), _inf_norm(s)) * max(1.0, _inf_norm(b))
            x_scale = _inf_norm(x) * max(1.0, _inf_norm(c))
            if by > 1e-6 * max(y_scale, 1e-300):
                cert = _inf_norm(A.T @ (y / by) + s / by)
                if cert <= st.tol_feas:
                    yr = expand_dual(y / by)
                    Sr = tuple(Sb / by for Sb in S)
                    met = SolveMetrics(
                        gap=math.nan,
                        primal_residual=math.inf,
                        dual_residual=cert,
                        iterations=iters,
                        tau=tau,
                        kappa=kappa,
                        dropped_rows=dropped,
                    )
                    return SdpSolution(
                        status=SdpStatus.PRIMAL_INFEASIBLE,
                        primal=None,
                        dual=yr,
                        dual_slack=Sr,
                        objective_value=None,
                        metrics=met,
                    )
            if -cx > 1e-6 * max(x_scale, 1e-300):
                xr = x / (-cx)
                cert = _inf_norm(A @ xr)
                if cert <= st.tol_feas:
                    Xr = tuple(Xb / (-cx) for Xb in X)
                    met = SolveMetrics(
                        gap=math.nan,
                        primal_residual=cert,
                        dual_residual=math.inf,
                        iterations=iters,
                        tau=tau,
                        kappa=kappa,
                        dropped_rows=dropped,
                    )
                    return SdpSolution(
                        status=SdpStatus.DUAL_INFEASIBLE,
                        primal=Xr,
                        dual=None,
                        dual_slack=None,
                        objective_value=None,
                        metrics=met,
                    )

        if iters == st.max_iter:
            break

        # -- Nesterov-Todd scaling per block
        G = []
        Gi = []
        lam = []
        Wnt = []
        for bidx, d in enumerate(dims):
            Lx = _chol_jitter(X[bidx], "primal iterate")
            Ls = _chol_jitter(S[bidx], "dual iterate")
            U, sv, V = _backend.jacobi_svd(Ls.T @ Lx)
            root = np.sqrt(sv)
            Gb = (Lx @ V) / root[None, :]
            Gib = ((U / root[None, :]).T) @ Ls.T
            G.append(Gb)
            Gi.append(Gib)
            lam.append(sv)
            Wb = Gb @ Gb.T
            Wnt.append(0.5 * (Wb + Wb.T))

        # -- scaled constraint matrices and Schur complement
        AW = np.zeros_like(A)
        for pos, k in enumerate(keep):
            for bidx in range(len(dims)):
                Fb = F_mats[k][bidx]
                AW[pos, slices[bidx]] = svec(Wnt[bidx] @ Fb @ Wnt[bidx])
        M0 = AW @ A.T
        M0 = 0.5 * (M0 + M0.T)
        L0 = _chol_jitter(M0, "Schur complement",
                          metrics_at(xs, ys, ss, iters))
        wc_blocks = [Wnt[bidx] @ _obj_block(c, slices, dims, bidx) @ Wnt[bidx]
                     for bidx in range(len(dims))]
        wc = stack_blocks(wc_blocks) if dims else np.zeros(0)
        g_awc = AW @ c
        h1 = _backend.chol_solve_factor(L0, g_awc + b) if m else np.zeros(0)
        den = float((b - g_awc) @ h1) + float(c @ wc) + kappa / tau

        def newton(rC_blocks, rtk, eta):
            rCv = stack_blocks(rC_blocks)
            rhs1 = -eta * rP - A @ rCv + eta * (AW @ rD)
            h2 = _backend.chol_solve_factor(L0, rhs1) if m else np.zeros(0)
            num = (
                -eta * rG
                + rtk / tau
                + float(c @ rCv)
                - eta * float(wc @ rD)
                - float((b - g_awc) @ h2)
            )
            dtau = num / den
            dy = h2 + dtau * h1
            dsv = -A.T @ dy + c * dtau + eta * rD
            dS = []
            dX = []
            for bidx, d in enumerate(dims):
                dSb = smat(dsv[slices[bidx]], d)
                dXb = rC_blocks[bidx] - Wnt[bidx] @ dSb @ Wnt[bidx]
                dS.append(0.5 * (dSb + dSb.T))
                dX.append(0.5 * (dXb + dXb.T))
            dkappa = (rtk - kappa * dtau) / tau
            return dX, dy, dS, dtau, dkappa

        def boundary(dX, dS, dtau, dkappa):
            theta = math.inf
            for bidx in range(len(dims)):
                root = np.sqrt(lam[bidx])
                Nx = Gi[bidx] @ dX[bidx] @ Gi[bidx].T
                Nx = Nx / root[:, None] / root[None, :]
                wx, _ = _backend.jacobi_eig(0.5 * (Nx + Nx.T))
                if wx[0] < 0.0:
                    theta = min(theta, -1.0 / wx[0])
                Ns = G[bidx].T @ dS[bidx] @ G[bidx]
                Ns = Ns / root[:, None] / root[None, :]
                ws, _ = _backend.jacobi_eig(0.5 * (Ns + Ns.T))
                if ws[0] < 0.0:
                    theta = min(theta, -1.0 / ws[0])
            if dtau < 0.0:
                theta = min(theta, -tau / dtau)
            if dkappa < 0.0:
                theta = min(theta, -kappa / dkappa)
            return theta

        # -- predictor (affine scaling direction)
        aff = newton([-Xb for Xb in X], -tau * kappa, 1.0)
        dXa, dya, dSa, dta, dka = aff
        th_aff = min(1.0, boundary(dXa, dSa, dta, dka))
        dot = sum(
            float(np.tensordot(X[bidx] + th_aff * dXa[bidx],
                               S[bidx] + th_aff * dSa[bidx]))
            for bidx in range(len(dims))
        )
        mu_aff = (dot + (tau + th_aff * dta) * (kappa + th_aff * dka)) / (nu + 1.0)
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # -- corrector (combined direction in scaled space)
        rC_blocks = []
        for bidx, d in enumerate(dims):
            dXh = Gi[bidx] @ dXa[bidx] @ Gi[bidx].T
            dSh = G[bidx].T @ dSa[bidx] @ G[bidx]
            Hc = 0.5 * (dXh @ dSh + dSh @ dXh)
            Rc = sigma * mu * np.eye(d) - np.diag(lam[bidx] ** 2) - Hc
            denom = lam[bidx][:, None] + lam[bidx][None, :]
            Rhat = 2.0 * Rc / denom
            rCb = G[bidx] @ Rhat @ G[bidx].T
            rC_blocks.append(0.5 * (rCb + rCb.T))
        rtk = sigma * mu - tau * kappa - dta * dka
        dX, dy, dS, dtau, dkappa = newton(rC_blocks, rtk, 1.0 - sigma)

        theta = min(1.0, 0.99 * boundary(dX, dS, dtau, dkappa))
        if not math.isfinite(theta) or theta <= 0.0:
            raise SolverError(
                "interior-point step collapsed",
                metrics=metrics_at(xs, ys, ss, iters),
            )
        for bidx in range(len(dims)):
            X[bidx] = 0.5 * ((X[bidx] + theta * dX[bidx])
                             + (X[bidx] + theta * dX[bidx]).T)
            S[bidx] = 0.5 * ((S[bidx] + theta * dS[bidx])
                             + (S[bidx] + theta * dS[bidx]).T)
        y = y + theta * dy
        tau = tau + theta * dtau
        kappa = kappa + theta * dkappa

    # -- iteration cap: report the tau-scaled iterate as-is
    tsafe = max(tau, 1e-300)
    x = stack_blocks(X) / tsafe
    s = stack_blocks(S) / tsafe
    yv = y / tsafe
    return SdpSolution(
        status=SdpStatus.MAX_ITERATIONS,
        primal=tuple(Xb / tsafe for Xb in X),
        dual=expand_dual(yv),
        dual_slack=tuple(Sb / tsafe for Sb in S),
        objective_value=float(c @ x),
        metrics=metrics_at(x, yv, s, st.max_iter),
    )


def _obj_block(c: np.ndarray, slices, dims, bidx: int) -> np.ndarray:
    return smat(c[slices[bidx]], dims[bidx])


# --------------------------------------------------------------------------
# verification and serialization


def verify(problem: SdpProblem, solution) -> VerifyReport:
    """Recompute feasibility residuals, objective, duality gap, minimum
    eigenvalues, and per-block complementarity from scratch.

    ``solution`` may be an :class:`SdpSolution` or a bare tuple/list of primal
    blocks. Missing pieces (dual, slack) are treated as zeros, so a zero
    primal yields ``primal_residual == max_k |rhs_k|``.
    """
    problem.validate()
    dims, slices, A_all, b_all, c, _ = _stack(problem)
    if isinstance(solution, SdpSolution):
        primal = solution.primal
        dual = solution.dual
        slack = solution.dual_slack
    else:
        primal = tuple(np.asarray(Bb, float) for Bb in solution)
        dual = None
        slack = None
    if primal is None:
        primal = tuple(np.zeros((d, d)) for d in dims)
    if dual is None:
        dual = np.zeros(len(problem.constraints))
    if slack is None:
        slack = tuple(np.zeros((d, d)) for d in dims)
    for bidx, (d, Pb) in enumerate(zip(dims, primal)):
        _check_block(Pb, d, f"solution block {bidx}")

    x = np.concatenate([svec(np.asarray(Pb, float)) for Pb in primal])
    s = np.concatenate([svec(np.asarray(Sb, float)) for Sb in slack])
    yv = np.asarray(dual, dtype=np.float64)
    if yv.shape != (len(problem.constraints),):
        raise InvalidInputError(
            f"dual vector has shape {yv.shape}, expected "
            f"({len(problem.constraints)},)"
        )
    pres = _inf_norm(A_all @ x - b_all)
    dres = _inf_norm(c - A_all.T @ yv - s)
    pobj = float(c @ x)
    dobj = float(b_all @ yv)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    min_eigs = []
    comps = []
    for bidx in range(len(dims)):
        Pb = 0.5 * (np.asarray(primal[bidx], float)
                    + np.asarray(primal[bidx], float).T)
        w, _ = _backend.jacobi_eig(Pb)
        min_eigs.append(float(w[0]))
        comps.append(float(np.tensordot(Pb, np.asarray(slack[bidx], float))))
    return VerifyReport(
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        objective_value=pobj,
        min_eigenvalues=tuple(min_eigs),
        complementarity=tuple(comps),
    )


def _fmt_matrix(M: np.ndarray) -> list[str]:
    return [" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(M)]


def dump_problem(problem: SdpProblem, dest: str | Path | IO[str]) -> None:
    """Write the problem in the plain-text exchange format.

    Layout: a header line ``blocks: d1 d2 ...``; the keyword line
    ``objective`` followed by each block's rows (whitespace-separated,
    17 significant digits); then per constraint a keyword line
    ``constraint <rhs>`` followed by its blocks' rows.
    """
    problem.validate()
    lines = ["blocks: " + " ".join(str(int(d)) for d in problem.block_dims)]
    lines.append("objective")
    for C in problem.objective:
        lines.extend(_fmt_matrix(np.asarray(C, float)))
    for row in problem.constraints:
        lines.append(f"constraint {float(row.rhs):.17g}")
        for F in row.coeffs:
            lines.extend(_fmt_matrix(np.asarray(F, float)))
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def load_problem(src: str | Path | IO[str],
                 settings: SdpSettings | None = None) -> SdpProblem:
    """Parse a problem written by :func:`dump_problem`."""
    if hasattr(src, "read"):
        text = src.read()
    else:
        text = Path(src).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("blocks:"):
        raise InvalidInputError("invalid problem file: missing 'blocks:' header")
    try:
        dims = tuple(int(tok) for tok in lines[0].split(":", 1)[1].split())
    except ValueError as exc:
        raise InvalidInputError("invalid problem file: bad block dims") from exc
    idx = 1

    def read_blocks(start: int) -> tuple[list[np.ndarray], int]:
        mats = []
        pos = start
        for d in dims:
            rows = []
            for _ in range(d):
                if pos >= len(lines):
                    raise InvalidInputError("invalid problem file: truncated block")
                rows.append([float(tok) for tok in lines[pos].split()])
                pos += 1
            M = np.asarray(rows, dtype=np.float64)
            if M.shape != (d, d):
                raise InvalidInputError(
                    f"invalid problem file: block row width {M.shape} != {d}"
                )
            mats.append(M)
        return mats, pos

    if idx >= len(lines) or lines[idx] != "objective":
        raise InvalidInputError("invalid problem file: missing 'objective'")
    objective, idx = read_blocks(idx + 1)
    constraints: list[ConstraintRow] = []
    while idx < len(lines):
        if not lines[idx].startswith("constraint"):
            raise InvalidInputError(
                f"invalid problem file: expected 'constraint', got {lines[idx]!r}"
            )
        rhs = float(lines[idx].split(None, 1)[1])
        coeffs, idx = read_blocks(idx + 1)
        constraints.append(ConstraintRow(coeffs=tuple(coeffs), rhs=rhs))
    problem = SdpProblem(
        block_dims=dims,
        objective=tuple(objective),
        constraints=constraints,
        settings=settings or SdpSettings(),
    )
    problem.validate()
    return problem
