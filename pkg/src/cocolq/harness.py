"""Simulation loop, cost accounting, noise generation, and sweeps.

The loop runs t = 1..T: the controller sees the scenario's *estimates*
(A_t, B_t), the plant advances on the truth, and every step logs
(t, x_t, u_t, w_t, stage cost, status, alpha). Noise for step t is a pure
function of ``(seed, t)``, so runs with the same seed share realizations
across algorithms and alphas, and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, controller, scenarios, stability
from .controller import CocoConfig, RelaxAlpha, StepStatus
from .errors import (
    ConfigError,
    InvalidInputError,
    LiftRankError,
    NotStabilizableError,
)
from .linalg import cholesky
from .sdp import SdpSettings

__all__ = [
    "Gaussian",
    "TruncatedGaussian",
    "Zero",
    "CocoLQ",
    "CocoLQPredict",
    "NaiveLTI",
    "HHorizon",
    "OfflineOptimal",
    "SimConfig",
    "Trajectory",
    "CostReport",
    "simulate",
    "average_cost",
    "SweepRow",
    "SweepResult",
    "alpha_sweep",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_sweep_csv",
]


# --------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class Gaussian:
    """w_t ~ N(0, W); ``W`` may be a full covariance or a scalar variance
    (meaning ``var * I``)."""

    W: object = 0.01


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian with the standardized draw clipped componentwise at
    ``cap_sigmas`` standard deviations, so the realized noise is bounded and
    disturbance-sup envelopes apply."""

    W: object = 0.01
    cap_sigmas: float = 3.0

    def __post_init__(self):
        if not self.cap_sigmas > 0:
            raise InvalidInputError(
                f"cap_sigmas must be positive, got {self.cap_sigmas}"
            )


@dataclass(frozen=True)
class Zero:
    """No process noise."""


def _noise_cov(noise, d: int) -> np.ndarray | None:
    if isinstance(noise, Zero):
        return None
    W = noise.W
    if np.isscalar(W):
        if float(W) <= 0:
            raise InvalidInputError(f"noise variance must be positive, got {W}")
        return float(W) * np.eye(d)
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (d, d):
        raise InvalidInputError(
            f"noise covariance must be {d}x{d}, got {W.shape}"
        )
    return W


def _draw_noise(noise, chol_w, seed: int, t: int, d: int) -> np.ndarray:
    if chol_w is None:
        return np.zeros(d)
    rng = np.random.default_rng([seed, t, 0])
    z = rng.standard_normal(d)
    if isinstance(noise, TruncatedGaussian):
        z = np.clip(z, -noise.cap_sigmas, noise.cap_sigmas)
    return chol_w @ z


# --------------------------------------------------------------------------
# algorithms


@dataclass(frozen=True)
class CocoLQ:
    alpha: float = 0.4
    fallback: RelaxAlpha | None = field(default_factory=RelaxAlpha)
    settings: SdpSettings = field(default_factory=SdpSettings)


@dataclass(frozen=True)
class CocoLQPredict:
    alpha: float = 0.4
    H: int = 2
    fallback: RelaxAlpha | None = field(default_factory=RelaxAlpha)
    settings: SdpSettings = field(default_factory=SdpSettings)

    def __post_init__(self):
        if self.H < 1:
            raise InvalidInputError(f"H must be >= 1, got {self.H}")


@dataclass(frozen=True)
class NaiveLTI:
    """Certainty-equivalent LQ on the current system, refrozen every step."""


@dataclass(frozen=True)
class HHorizon:
    """Finite-horizon LQ over the prediction window. By default commits the
    whole window's controls as values at block starts (t = 1 mod H); with
    ``receding`` it recomputes every step and applies only the first gain."""

    H: int = 2
    receding: bool = False

    def __post_init__(self):
        if self.H < 1:
            raise InvalidInputError(f"H must be >= 1, got {self.H}")


@dataclass(frozen=True)
class OfflineOptimal:
    """Clairvoyant finite-horizon optimum over the full run (true matrices,
    terminal cost Q). The normalization baseline for cost reports."""


# --------------------------------------------------------------------------
# configuration and results


@dataclass
class SimConfig:
    """One reproducible run.

    Defaults mirror the standard experiment family: Q = 0.2 I, R = I,
    x0 = ones, T = 500, Gaussian noise with variance 0.01 per coordinate.
    ``w_model`` is the covariance the synthesizer assumes; it defaults to the
    identity, which yields the same policy as any scalar multiple.
    """

    scenario: scenarios.SystemProvider
    algorithm: object
    steps: int = 500
    seed: int = 0
    noise: object = field(default_factory=Gaussian)
    x0: object = None
    Q: object = None
    R: object = None
    w_model: object = None
    record_steps: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")


@dataclass
class Trajectory:
    """Realized run. ``states`` has one more row than the others (the
    terminal state), except when parsed back from CSV, which stores only
    the decision-time states."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    noises: np.ndarray
    stage_costs: np.ndarray
    statuses: list
    alpha_used: np.ndarray
    terminated_early: bool = False
    # (t, PolicyStep, (A, B)) per synthesis, when record_steps was set
    policy_steps: list | None = None


@dataclass
class CostReport:
    avg_cost: float
    sup_state_norm: float
    sup_noise_norm: float
    steps_run: int
    normalized: float | None = None
    n_feasible: int = 0
    n_fallback: int = 0
    n_infeasible: int = 0
    terminated_early: bool = False


def _weight(M, n: int, default_scale: float, name: str) -> np.ndarray:
    if M is None:
        return default_scale * np.eye(n)
    if np.isscalar(M):
        return float(M) * np.eye(n)
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (n, n):
        raise InvalidInputError(f"{name} must be {n}x{n}, got {M.shape}")
    return M


class _Terminate(Exception):
    """Internal: stop the run at the current step (fallback disabled)."""


class _Policy:
    """Per-algorithm control selection. ``choose`` returns
    (u, status, alpha_used) and may raise _Terminate."""

    def __init__(self, config: SimConfig, d: int, p: int,
                 Q: np.ndarray, R: np.ndarray, W: np.ndarray):
        self.cfg = config
        self.alg = config.algorithm
        self.scn = config.scenario
        self.d, self.p = d, p
        self.Q, self.R, self.W = Q, R, W
        self._plan: np.ndarray | None = None  # committed block values
        self._plan_status = ""
        self._plan_alpha = math.nan
        self.recorded: list | None = [] if config.record_steps else None
        # synthesis is deterministic in (A, B), so repeated systems (e.g.
        # period-2 scenarios) reuse the solve
        self._cache: dict = {}
        self._offline_gains: list | None = None
        if isinstance(self.alg, OfflineOptimal):
            if self.scn.adaptive:
                raise InvalidInputError(
                    f"scenario '{self.scn.name}' is adaptive: its true "
                    "future systems depend on the realized trajectory, so "
                    "no offline optimum exists"
                )
            systems = [self.scn.matrices(t) for t in
                       range(1, config.steps + 1)]
            self._offline_gains = baselines.offline_optimal(systems, Q, R)

    # -- helpers

    def _coco_cfg(self) -> CocoConfig:
        return CocoConfig(alpha=self.alg.alpha, fallback=self.alg.fallback,
                          settings=self.alg.settings)

    def _status_of(self, step: controller.PolicyStep) -> str:
        return "feasible" if step.alpha_used == self.alg.alpha else "fallback"

    def choose(self, t: int, x: np.ndarray,
               history: scenarios.History) -> tuple[np.ndarray, str, float]:
        alg = self.alg
        if isinstance(alg, CocoLQ):
            A, B = self.scn.estimates(t, history)
            key = (A.tobytes(), B.tobytes())
            step = self._cache.get(key)
            if step is None:
                step = controller.coco_step(A, B, self.Q, self.R, self.W,
                                            self._coco_cfg())
                self._cache[key] = step
            if self.recorded is not None:
                self.recorded.append((t, step, (A, B)))
            if step.status == StepStatus.OK:
                return step.K @ x, self._status_of(step), step.alpha_used
            if alg.fallback is None:
                raise _Terminate(step.alpha_used)
            return np.zeros(self.p), "infeasible", step.alpha_used

        if isinstance(alg, CocoLQPredict):
            offset = (t - 1) % alg.H
            if offset == 0:
                self._plan = None
                window = self.scn.prediction_window(t, alg.H)
                key = tuple(
                    (np.asarray(A).tobytes(), np.asarray(B).tobytes())
                    for A, B in window)
                step = self._cache.get(key)
                if step is None:
                    step = controller.coco_predict_step(
                        window, self.Q, self.R, self.W, self._coco_cfg())
                    self._cache[key] = step
                if self.recorded is not None:
                    self.recorded.append(
                        (t, step,
                         (step.lifted.A_tilde, step.lifted.B_tilde)))
                if step.status == StepStatus.OK:
                    self._plan = controller.planned_controls(step, x)
                    self._plan_status = self._status_of(step)
                    self._plan_alpha = step.alpha_used
                elif alg.fallback is None:
                    raise _Terminate(step.alpha_used)
                else:
                    self._plan_alpha = step.alpha_used
            if self._plan is None:
                return np.zeros(self.p), "infeasible", self._plan_alpha
            return (np.asarray(self._plan[offset]), self._plan_status,
                    self._plan_alpha)

        if isinstance(alg, NaiveLTI):
            A, B = self.scn.estimates(t, history)
            key = (A.tobytes(), B.tobytes())
            K = self._cache.get(key, False)
            if K is False:
                try:
                    K = baselines.naive_lti_step(A, B, self.Q, self.R)
                except NotStabilizableError:
                    K = None
                self._cache[key] = K
            if K is None:
                return np.zeros(self.p), "infeasible", math.nan
            return K @ x, "feasible", math.nan

        if isinstance(alg, HHorizon):
            if alg.receding:
                window = self.scn.prediction_window(t, alg.H)
                gains = baselines.h_horizon_step(window, self.Q, self.R)
                return gains[0] @ x, "feasible", math.nan
            offset = (t - 1) % alg.H
            if offset == 0:
                window = self.scn.prediction_window(t, alg.H)
                gains = baselines.h_horizon_step(window, self.Q, self.R)
                plan = np.empty((alg.H, self.p))
                xh = np.asarray(x, dtype=np.float64)
                for j, (K, (A, B)) in enumerate(zip(gains, window)):
                    plan[j] = K @ xh
                    xh = A @ xh + B @ plan[j]
                self._plan = plan
            return np.asarray(self._plan[offset]), "feasible", math.nan

        if isinstance(alg, OfflineOptimal):
            return self._offline_gains[t - 1] @ x, "feasible", math.nan

        raise ConfigError(f"unknown algorithm {type(alg).__name__}")


def simulate(config: SimConfig) -> tuple[Trajectory, CostReport]:
    """Run the loop x_{t+1} = A_t x_t + B_t u_t + w_t for t = 1..steps.

    Deterministic given the seed. An infeasible synthesis step terminates
    the run when the algorithm has no fallback; otherwise the step applies
    u = 0, records status "infeasible", and the run continues.
    """
    scn = config.scenario
    d, p = scn.dims
    Q = _weight(config.Q, d, 0.2, "Q")
    R = _weight(config.R, p, 1.0, "R")
    w_model = config.w_model
    if w_model is None and scn.default_w_model is not None:
        w_model = np.diag(np.asarray(scn.default_w_model, dtype=np.float64))
    W_model = _weight(w_model, d, 1.0, "w_model")
    x = (np.ones(d) if config.x0 is None
         else np.asarray(config.x0, dtype=np.float64).reshape(-1))
    if x.shape != (d,):
        raise InvalidInputError(f"x0 must have dimension {d}, got {x.shape}")

    cov = _noise_cov(config.noise, d)
    chol_w = cholesky(cov) if cov is not None else None

    policy = _Policy(config, d, p, Q, R, W_model)
    history = scenarios.History(states=[x.copy()], controls=[])

    times, controls, noises, costs, statuses, alphas = [], [], [], [], [], []
    terminated = False
    for t in range(1, config.steps + 1):
        try:
            u, status, alpha = policy.choose(t, x, history)
        except _Terminate as stop:
            times.append(t)
            controls.append(np.zeros(p))
            noises.append(np.zeros(d))
            costs.append(float(x @ Q @ x))
            statuses.append("infeasible")
            alphas.append(float(stop.args[0]))
            terminated = True
            break
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        w = _draw_noise(config.noise, chol_w, config.seed, t, d)
        cost = float(x @ Q @ x + u @ R @ u)
        times.append(t)
        controls.append(u)
        noises.append(w)
        costs.append(cost)
        statuses.append(status)
        alphas.append(float(alpha))
        history.controls.append(u.copy())
        x = np.asarray(scn.plant_step(t, x, u, w, history), dtype=np.float64)
        history.states.append(x.copy())

    traj = Trajectory(
        times=np.asarray(times, dtype=np.int64),
        states=np.asarray(history.states),
        controls=np.asarray(controls),
        noises=np.asarray(noises),
        stage_costs=np.asarray(costs),
        statuses=statuses,
        alpha_used=np.asarray(alphas),
        terminated_early=terminated,
        policy_steps=policy.recorded,
    )
    report = CostReport(
        avg_cost=float(np.mean(traj.stage_costs)),
        sup_state_norm=float(
            np.max(np.linalg.norm(traj.states, axis=1))),
        sup_noise_norm=float(
            np.max(np.linalg.norm(traj.noises, axis=1), initial=0.0)),
        steps_run=len(times),
        n_feasible=statuses.count("feasible"),
        n_fallback=statuses.count("fallback"),
        n_infeasible=statuses.count("infeasible"),
        terminated_early=terminated,
    )
    return traj, report


def average_cost(trajectory: Trajectory, Q=None, R=None) -> float:
    """(1/T) sum of stage costs; pass Q and R to recompute from the raw
    states and controls instead of trusting the recorded column."""
    n = len(trajectory.times)
    if n == 0:
        raise InvalidInputError("trajectory is empty")
    if Q is None and R is None:
        return float(np.mean(trajectory.stage_costs))
    d = trajectory.controls.shape[1] if trajectory.controls.ndim == 2 else 1
    Qm = _weight(Q, trajectory.states.shape[1], 0.2, "Q")
    Rm = _weight(R, d, 1.0, "R")
    total = 0.0
    for i in range(n):
        xi = trajectory.states[i]
        ui = trajectory.controls[i]
        total += float(xi @ Qm @ xi + ui @ Rm @ ui)
    return total / n


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    alpha: float
    report: CostReport | None
    error: str | None = None


@dataclass
class SweepResult:
    rows: list
    offline_avg_cost: float | None = None


def alpha_sweep(config: SimConfig, alphas) -> SweepResult:
    """Re-run ``config`` once per alpha on the identical noise realization.

    The algorithm must be coco-family (its alpha is replaced per run). When
    the scenario admits an offline-optimal run, each report's ``normalized``
    field is filled with avg_cost / offline avg_cost. Per-run failures are
    recorded and the sweep continues.
    """
    alphas = list(alphas)
    if not alphas:
        raise InvalidInputError("alpha list must be non-empty")
    if not isinstance(config.algorithm, (CocoLQ, CocoLQPredict)):
        raise ConfigError(
            "alpha_sweep requires a CocoLQ or CocoLQPredict algorithm"
        )
    offline_avg = None
    if not config.scenario.adaptive:
        try:
            _, off = simulate(replace(config, algorithm=OfflineOptimal()))
            offline_avg = off.avg_cost
        except (InvalidInputError, NotStabilizableError, ConfigError):
            offline_avg = None

    rows = []
    for alpha in alphas:
        run_cfg = replace(
            config, algorithm=replace(config.algorithm, alpha=float(alpha)))
        try:
            _, rep = simulate(run_cfg)
        except (InvalidInputError, ConfigError, LiftRankError,
                NotStabilizableError, FloatingPointError) as exc:
            rows.append(SweepRow(alpha=float(alpha), report=None,
                                 error=f"{type(exc).__name__}: {exc}"))
            continue
        if offline_avg is not None and offline_avg > 0:
            rep.normalized = rep.avg_cost / offline_avg
        rows.append(SweepRow(alpha=float(alpha), report=rep))
    return SweepResult(rows=rows, offline_avg_cost=offline_avg)


# --------------------------------------------------------------------------
# CSV logging


def _fmt(v: float) -> str:
    return "%.17g" % float(v)


def trajectory_csv_header(d: int, p: int) -> str:
    cols = (["t"]
            + [f"x{i}" for i in range(d)]
            + [f"u{i}" for i in range(p)]
            + [f"w{i}" for i in range(d)]
            + ["stage_cost", "status", "alpha_used"])
    return ",".join(cols)


def trajectory_csv_text(traj: Trajectory) -> str:
    d = traj.states.shape[1]
    p = traj.controls.shape[1]
    out = io.StringIO()
    out.write(trajectory_csv_header(d, p) + "\n")
    for i, t in enumerate(traj.times):
        row = ([str(int(t))]
               + [_fmt(v) for v in traj.states[i]]
               + [_fmt(v) for v in traj.controls[i]]
               + [_fmt(v) for v in traj.noises[i]]
               + [_fmt(traj.stage_costs[i]), traj.statuses[i],
                  _fmt(traj.alpha_used[i])])
        out.write(",".join(row) + "\n")
    return out.getvalue()


def write_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_csv_text(traj))


def read_trajectory_csv(path) -> Trajectory:
    """Parse a trajectory CSV back into arrays. The returned ``states`` hold
    only the logged decision-time states (no terminal row)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for c in header if c.startswith("x"))
        p = sum(1 for c in header if c.startswith("u"))
        expect = trajectory_csv_header(d, p).split(",")
        if header != expect:
            raise InvalidInputError(
                f"unrecognized trajectory header: {header!r}"
            )
        times, states, controls, noises = [], [], [], []
        costs, statuses, alphas = [], [], []
        for row in reader:
            if not row:
                continue
            times.append(int(row[0]))
            k = 1
            states.append([float(v) for v in row[k:k + d]]); k += d
            controls.append([float(v) for v in row[k:k + p]]); k += p
            noises.append([float(v) for v in row[k:k + d]]); k += d
            costs.append(float(row[k]))
            statuses.append(row[k + 1])
            alphas.append(float(row[k + 2]))
    return Trajectory(
        times=np.asarray(times, dtype=np.int64),
        states=np.asarray(states),
        controls=np.asarray(controls),
        noises=np.asarray(noises),
        stage_costs=np.asarray(costs),
        statuses=statuses,
        alpha_used=np.asarray(alphas),
    )


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("alpha,avg_cost,normalized,sup_state_norm,error\n")
        for row in result.rows:
            if row.report is None:
                fh.write(f"{_fmt(row.alpha)},,,,{row.error}\n")
                continue
            rep = row.report
            norm = "" if rep.normalized is None else _fmt(rep.normalized)
            fh.write(",".join([
                _fmt(row.alpha), _fmt(rep.avg_cost), norm,
                _fmt(rep.sup_state_norm), "",
            ]) + "\n")


# --------------------------------------------------------------------------
# post-hoc certification


@dataclass
class CertifyOutcome:
    certificate: stability.CertificateReport
    audit: stability.AuditReport
    envelope: stability.IssEnvelope


def certify_run(traj: Trajectory, scenario: scenarios.SystemProvider,
                alpha: float, Q=None, R=None, w_model=None,
                settings: SdpSettings | None = None) -> CertifyOutcome:
    """Re-derive per-step certificates along a recorded trajectory.

    Re-synthesizes the covariance-constrained step at each step's recorded
    alpha on the scenario's estimates (history rebuilt from the log), checks
    the sequential-strong-stability conditions, and audits the states
    against the disturbance-sup envelope implied by ``alpha`` and the model
    covariance.
    """
    n = len(traj.times)
    if n == 0:
        raise InvalidInputError("trajectory is empty")
    d = traj.states.shape[1]
    Qm = _weight(Q, d, 0.2, "Q")
    Rm = _weight(R, traj.controls.shape[1], 1.0, "R")
    if w_model is None and scenario.default_w_model is not None:
        w_model = np.diag(np.asarray(scenario.default_w_model,
                                     dtype=np.float64))
    Wm = _weight(w_model, d, 1.0, "w_model")
    cfg_settings = settings or SdpSettings()

    step_tuples = []
    history = scenarios.History(states=[], controls=[])
    for i in range(n):
        history.states.append(np.asarray(traj.states[i], dtype=np.float64))
        a_i = traj.alpha_used[i]
        a_run = float(a_i) if math.isfinite(a_i) else float(alpha)
        A, B = scenario.estimates(int(traj.times[i]), history)
        step = controller.coco_step(
            A, B, Qm, Rm, Wm,
            CocoConfig(alpha=a_run, fallback=None, settings=cfg_settings))
        if step.status != StepStatus.OK:
            raise InvalidInputError(
                f"step t={int(traj.times[i])} cannot be re-synthesized at "
                f"alpha={a_run} (status {step.status.value}); "
                "certification needs a feasible run"
            )
        step_tuples.append((A, B, step.K, step.sigma_xx))
        history.controls.append(np.asarray(traj.controls[i], dtype=np.float64))

    cert = stability.certify_sequence(step_tuples, alpha=float(alpha), W=Wm)
    params = stability.contraction_params(float(alpha), Wm)
    w_sup = float(np.max(np.linalg.norm(traj.noises, axis=1), initial=0.0))
    env = stability.IssEnvelope(
        t0=int(traj.times[0]), kappa=params.kappa, rho=params.rho,
        noise_sup=w_sup, x0_norm=float(np.linalg.norm(traj.states[0])))
    audit = stability.iss_audit(traj.states[:n], env)
    return CertifyOutcome(certificate=cert, audit=audit, envelope=env)
