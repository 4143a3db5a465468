"""Sequential stability certificates and disturbance-rejection envelopes.

A gain sequence is certified through the similarity transform induced by the
state covariance: with ``H_t = psd_sqrt(Sigma_xx,t)`` and ``L_t =
H_t^{-1} (A_t + B_t K_t) H_t``, a covariance-constrained step guarantees

- contraction:      ``||L_t|| <= sqrt(alpha)``
- conditioning:     ``||H_t|| ||H_t^{-1}|| <= kappa_W / sqrt(1 - alpha)``
- transition:       ``||H_{t+1}^{-1} H_t|| <= 1 / sqrt(1 - alpha)``

which together give input-to-state stability of the closed loop with decay
``rho = sqrt(alpha/(1-alpha))`` whenever ``alpha < 1/2``. This module checks
those inequalities on realized sequences and audits trajectories against the
resulting envelopes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, OutOfGuaranteeError
from .linalg import condition_number, spectral_norm, sym_eig

__all__ = [
    "ContractionParams",
    "contraction_params",
    "decompose",
    "StepRecord",
    "CertificateThresholds",
    "CertificateReport",
    "certify_sequence",
    "IssEnvelope",
    "AuditReport",
    "iss_audit",
    "LiftedEnvelope",
    "lifted_envelope",
    "write_certificate_csv",
]

#: slack added to every certificate threshold before comparison
CERT_SLACK = 1e-7


@dataclass(frozen=True)
class ContractionParams:
    """Closed-loop decay constants implied by the covariance constraint."""

    alpha: float
    kappa_w: float
    kappa: float  # conditioning bound kappa_w / sqrt(1 - alpha)
    gamma: float  # per-step contraction margin 1 - sqrt(alpha)
    rho: float    # decay rate sqrt(alpha / (1 - alpha))


def contraction_params(alpha: float, W) -> ContractionParams:
    """Decay constants for a given contraction level and noise covariance.

    Only defined on the guaranteed range ``0 <= alpha < 1/2`` (outside it the
    implied ``rho`` reaches one and no decay is certified).
    """
    alpha = float(alpha)
    if not 0.0 <= alpha:
        raise InvalidInputError(f"alpha must be nonnegative, got {alpha}")
    if alpha >= 0.5:
        raise OutOfGuaranteeError(
            f"decay constants are only guaranteed for alpha < 1/2, got {alpha}"
        )
    kappa_w = condition_number(W)
    return ContractionParams(
        alpha=alpha,
        kappa_w=kappa_w,
        kappa=kappa_w / math.sqrt(1.0 - alpha),
        gamma=1.0 - math.sqrt(alpha),
        rho=math.sqrt(alpha / (1.0 - alpha)),
    )


def decompose(A, B, K, sigma_xx) -> tuple[np.ndarray, np.ndarray]:
    """Similarity decomposition of one closed-loop step.

    Returns ``(H, L)`` with ``H = psd_sqrt(sigma_xx)`` and
    ``L = H^{-1} (A + B K) H``, so that ``H L H^{-1}`` reconstructs the
    closed-loop matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    w, V = sym_eig(sigma_xx)
    if w[0] <= 1e-14 * (1.0 + float(w[-1])):
        raise InvalidInputError(
            "sigma_xx must be positive definite to form the similarity"
        )
    root = np.sqrt(w)
    H = (V * root) @ V.T
    Hinv = (V / root) @ V.T
    M = A + B @ K
    return H, Hinv @ M @ H


@dataclass
class StepRecord:
    index: int
    H: np.ndarray
    L: np.ndarray
    norm_L: float
    norm_H: float
    norm_H_inv: float

    @property
    def conditioning(self) -> float:
        return self.norm_H * self.norm_H_inv


@dataclass(frozen=True)
class CertificateThresholds:
    sqrt_alpha: float
    kappa: float
    transition_cap: float
    slack: float = CERT_SLACK


@dataclass
class CertificateReport:
    passed: bool
    records: list[StepRecord]
    transition_norms: list[float]
    thresholds: CertificateThresholds
    contraction_failures: tuple[int, ...]
    conditioning_failures: tuple[int, ...]
    transition_failures: tuple[int, ...]
    # worst-case margins (threshold + slack - value); negative means failed
    worst_contraction_margin: float
    worst_conditioning_margin: float
    worst_transition_margin: float


def certify_sequence(steps: Sequence, alpha: float, W) -> CertificateReport:
    """Check the contraction/conditioning/transition inequalities along a
    realized sequence of steps ``(A_t, B_t, K_t, sigma_xx_t)``.

    Never raises on a failing or numerically degenerate step; such steps are
    recorded as failures (with infinite norms when the similarity itself
    could not be formed).
    """
    params = contraction_params(alpha, W)
    thresholds = CertificateThresholds(
        sqrt_alpha=math.sqrt(params.alpha),
        kappa=params.kappa,
        transition_cap=1.0 / math.sqrt(1.0 - params.alpha),
    )
    records: list[StepRecord] = []
    Hs: list[np.ndarray | None] = []
    for t, (A, B, K, sigma) in enumerate(steps):
        try:
            H, L = decompose(A, B, K, sigma)
            w, V = sym_eig(sigma)
            root = np.sqrt(np.clip(w, 0.0, None))
            norm_H = float(root[-1])
            norm_H_inv = float(1.0 / root[0]) if root[0] > 0 else math.inf
            rec = StepRecord(
                index=t,
                H=H,
                L=L,
                norm_L=spectral_norm(L),
                norm_H=norm_H,
                norm_H_inv=norm_H_inv,
            )
            Hs.append(H)
        except Exception:
            rec = StepRecord(
                index=t,
                H=np.full_like(np.asarray(sigma, float), math.nan),
                L=np.full_like(np.asarray(sigma, float), math.nan),
                norm_L=math.inf,
                norm_H=math.inf,
                norm_H_inv=math.inf,
            )
            Hs.append(None)
        records.append(rec)

    transition_norms: list[float] = []
    for t in range(len(records) - 1):
        Hc, Hn = Hs[t], Hs[t + 1]
        if Hc is None or Hn is None:
            transition_norms.append(math.inf)
            continue
        try:
            wn, Vn = sym_eig(Hn @ Hn)  # = sigma_{t+1}
            rootn = np.sqrt(np.clip(wn, 0.0, None))
            if rootn[0] <= 0:
                transition_norms.append(math.inf)
                continue
            Hn_inv = (Vn / rootn) @ Vn.T
            transition_norms.append(spectral_norm(Hn_inv @ Hc))
        except Exception:
            transition_norms.append(math.inf)

    slack = thresholds.slack
    contraction_failures = tuple(
        r.index for r in records if not r.norm_L <= thresholds.sqrt_alpha + slack
    )
    conditioning_failures = tuple(
        r.index for r in records if not r.conditioning <= thresholds.kappa + slack
    )
    transition_failures = tuple(
        t for t, v in enumerate(transition_norms)
        if not v <= thresholds.transition_cap + slack
    )

    def margin(threshold: float, values) -> float:
        vals = list(values)
        if not vals:
            return math.inf
        return float(threshold + slack - max(vals))

    return CertificateReport(
        passed=not (contraction_failures or conditioning_failures
                    or transition_failures),
        records=records,
        transition_norms=transition_norms,
        thresholds=thresholds,
        contraction_failures=contraction_failures,
        conditioning_failures=conditioning_failures,
        transition_failures=transition_failures,
        worst_contraction_margin=margin(
            thresholds.sqrt_alpha, (r.norm_L for r in records)),
        worst_conditioning_margin=margin(
            thresholds.kappa, (r.conditioning for r in records)),
        worst_transition_margin=margin(
            thresholds.transition_cap, transition_norms),
    )


@dataclass(frozen=True)
class IssEnvelope:
    """Geometric disturbance-rejection envelope

    ``bound(t) = kappa rho^(t-t0) ||x_{t0}|| + kappa rho/(1-rho) noise_sup``.
    """

    t0: int
    kappa: float
    rho: float
    noise_sup: float
    x0_norm: float

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise InvalidInputError(f"rho must lie in [0, 1), got {self.rho}")
        if not (math.isfinite(self.noise_sup) and self.noise_sup >= 0.0):
            raise InvalidInputError(
                "noise_sup must be finite and nonnegative; audits of "
                "unbounded noise are not defined"
            )

    def bound(self, t: int) -> float:
        k = t - self.t0
        if k < 0:
            raise InvalidInputError(f"t={t} precedes envelope start t0={self.t0}")
        decay = 1.0 if k == 0 else self.rho ** k
        tail = self.kappa * self.rho / (1.0 - self.rho) * self.noise_sup
        return self.kappa * decay * self.x0_norm + tail


@dataclass
class AuditReport:
    violations: tuple[int, ...]
    max_ratio: float
    checked: int


def iss_audit(states, envelope, t0: int | None = None) -> AuditReport:
    """Compare realized state norms against ``envelope.bound(t)``.

    ``states`` holds x_t row-wise for consecutive t starting at ``t0``
    (defaults to ``envelope.t0``). A time t is a violation when
    ``||x_t|| > bound(t) * (1 + 1e-9)``; non-finite states always violate.
    """
    X = np.asarray(states, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    start = envelope.t0 if t0 is None else int(t0)
    violations = []
    max_ratio = 0.0
    for i in range(X.shape[0]):
        t = start + i
        nx = float(np.linalg.norm(X[i]))
        bd = float(envelope.bound(t))
        ratio = nx / bd if bd > 0 else math.inf
        if not math.isfinite(nx) or nx > bd * (1.0 + 1e-9):
            violations.append(t)
        if not math.isfinite(ratio):
            max_ratio = math.inf
        else:
            max_ratio = max(max_ratio, ratio)
    return AuditReport(
        violations=tuple(violations), max_ratio=max_ratio, checked=X.shape[0]
    )


@dataclass(frozen=True)
class LiftedEnvelope:
    """Envelope for horizon-``H`` lifted control of a rank-deficient-input
    chain, in original (unlifted) time.

    ``bound(t) = kappa_A' rho^(t/H - 1) x1_norm
                 + kappa_A' kappa_A kappa max(1, rho/(1-rho)) w_sup``.
    """

    H: int
    kappa: float
    rho: float
    kappa_A: float
    kappa_A_prime: float
    x1_norm: float = 1.0
    w_sup: float = 0.0
    t0: int = 1

    @property
    def noise_sup(self) -> float:
        return self.w_sup

    def bound(self, t: int) -> float:
        decay = self.rho ** (t / self.H - 1.0)
        tail = (
            self.kappa_A_prime * self.kappa_A * self.kappa
            * max(1.0, self.rho / (1.0 - self.rho)) * self.w_sup
        )
        return self.kappa_A_prime * decay * self.x1_norm + tail


def lifted_envelope(
    alpha: float,
    W,
    a: float,
    b: float,
    H: int,
    sigma: float,
    kappa_R: float,
    x1_norm: float = 1.0,
    w_sup: float = 0.0,
) -> LiftedEnvelope:
    """Disturbance envelope constants for lifted horizon-H control.

    Parameters bound the raw system over the run: ``a >= ||A_t||``,
    ``b >= ||B_t||``, ``sigma <= lambda_min(B_tilde B_tilde^T)`` for every
    lifted window, and ``kappa_R`` is the condition number of the control
    weight. ``W`` is the covariance driving the lifted step (the lifted
    disturbance covariance when H > 1).
    """
    if int(H) < 1:
        raise InvalidInputError(f"H must be >= 1, got {H}")
    if sigma <= 0:
        raise InvalidInputError(
            f"sigma must be positive (rank condition), got {sigma}"
        )
    params = contraction_params(alpha, W)
    a = float(a)
    kappa_A = sum(a ** j for j in range(int(H)))
    kappa_A_prime = (
        a ** (int(H) - 1)
        + (float(b) ** 2) * kappa_A ** 2 * float(kappa_R)
        * (params.kappa + a ** int(H)) / float(sigma)
    )
    return LiftedEnvelope(
        H=int(H),
        kappa=params.kappa,
        rho=params.rho,
        kappa_A=kappa_A,
        kappa_A_prime=kappa_A_prime,
        x1_norm=float(x1_norm),
        w_sup=float(w_sup),
    )


def write_certificate_csv(report: CertificateReport, dest: str | Path) -> None:
    """Write one row per certified step:
    ``t, norm_L, kappa_t, transition_norm, pass`` (the transition field is
    empty on the final row, which has no successor)."""
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "norm_L", "kappa_t", "transition_norm", "pass"])
        for i, rec in enumerate(report.records):
            trans = (
                f"{report.transition_norms[i]:.17g}"
                if i < len(report.transition_norms) else ""
            )
            ok = (
                rec.index not in report.contraction_failures
                and rec.index not in report.conditioning_failures
                and i not in report.transition_failures
            )
            writer.writerow([
                rec.index,
                f"{rec.norm_L:.17g}",
                f"{rec.conditioning:.17g}",
                trans,
                "1" if ok else "0",
            ])
