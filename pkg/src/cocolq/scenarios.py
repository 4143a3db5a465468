"""Time-varying benchmark systems.

Every scenario is a :class:`SystemProvider`: a source of per-step matrices
``(A_t, B_t)`` for t = 1, 2, ... together with the controller-visible
estimates (identical to the truth unless wrapped by :func:`perturb`), an
optional prediction window, and the plant update (linear by default; the
pendulum overrides it with the nonlinear forward-Euler step so that the
controller's linearization carries genuine model error).

Adaptive scenarios (pendulum, adversary) choose ``A_t`` from the realized
trajectory and therefore refuse prediction windows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .linalg import spectral_norm

__all__ = [
    "History",
    "SystemProvider",
    "switching",
    "sinusoid",
    "GridParams",
    "grid9",
    "pendulum",
    "adversary",
    "rank_deficient_pair",
    "perturb",
    "make_scenario",
    "SCENARIOS",
]


@dataclass
class History:
    """Realized trajectory as seen at decision time t: ``states`` holds
    x_1..x_t and ``controls`` holds u_1..u_{t-1}."""

    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)


class SystemProvider:
    """Base class for scenario dynamics.

    Subclasses set ``d``, ``p``, ``adaptive``, ``name`` and implement
    ``matrices``; everything else has sensible defaults. A scenario whose
    disturbance has known structure may expose it through
    ``default_w_model`` (the covariance the synthesizer assumes when the
    run does not override it).
    """

    d: int
    p: int
    adaptive: bool = False
    name: str = "provider"
    default_w_model: object = None

    @property
    def dims(self) -> tuple[int, int]:
        return self.d, self.p

    def matrices(self, t: int, history: History | None = None):
        """True ``(A_t, B_t)`` driving the plant at step t (t >= 1)."""
        raise NotImplementedError

    def estimates(self, t: int, history: History | None = None):
        """Controller-visible ``(A_t, B_t)``; the truth unless perturbed."""
        return self.matrices(t, history)

    def prediction_window(self, t: int, H: int) -> list:
        """Controller-visible systems for steps t..t+H-1. Adaptive scenarios
        depend on states that do not exist yet and refuse."""
        if self.adaptive:
            raise InvalidInputError(
                f"scenario '{self.name}' is adaptive: future systems depend "
                "on the realized trajectory, so no prediction window exists"
            )
        return [self.estimates(s) for s in range(t, t + int(H))]

    def plant_step(self, t: int, x, u, w, history: History | None = None):
        A, B = self.matrices(t, history)
        return A @ np.asarray(x, float) + B @ np.asarray(u, float) \
            + np.asarray(w, float)


class _Switching(SystemProvider):
    """Period-2 alternation between an upper- and lower-triangular coupling;
    each factor is Schur stable yet their product is expansive, which is the
    canonical trap for frozen-system controllers."""

    d, p = 2, 2
    name = "switching"

    def __init__(self, rho: float = 0.99, a: float = 1.5):
        if not 0.0 < rho < 1.0:
            raise InvalidInputError(f"rho must lie in (0, 1), got {rho}")
        if a <= math.sqrt(2.0):
            warnings.warn(
                "coupling a <= sqrt(2): the alternation product is not "
                "expansive and the scenario loses its point",
                stacklevel=2,
            )
        self.rho = float(rho)
        self.a = float(a)
        self._A1 = np.array([[self.rho, self.a], [0.0, self.rho]])
        self._A2 = self._A1.T.copy()
        self._B = np.eye(2)

    def matrices(self, t, history=None):
        A = self._A1 if t % 2 == 1 else self._A2
        return A, self._B


def switching(rho: float = 0.99, a: float = 1.5) -> SystemProvider:
    """Alternating-coupling system, starting with the upper-triangular form
    at t = 1."""
    return _Switching(rho=rho, a=a)


class _Sinusoid(SystemProvider):
    """Smoothly rotating coupling whose magnitude grows like e^{t/60}."""

    d, p = 2, 2
    name = "sinusoid"

    def __init__(self, rho: float = 0.99, growth: float = 60.0):
        self.rho = float(rho)
        self.growth = float(growth)
        self._B = np.eye(2)

    def matrices(self, t, history=None):
        scale = math.exp(t / self.growth)
        A = np.array([
            [self.rho, abs(math.sin(math.pi * t / 2.0)) * scale],
            [abs(math.cos(math.pi * t / 2.0)) * scale, self.rho],
        ])
        return A, self._B


def sinusoid(rho: float = 0.99, growth: float = 60.0) -> SystemProvider:
    return _Sinusoid(rho=rho, growth=growth)


def _ring_laplacian(n: int = 3) -> np.ndarray:
    L = 2.0 * np.eye(n)
    for i in range(n):
        L[i, (i + 1) % n] -= 1.0
        L[i, (i - 1) % n] -= 1.0
    return L


@dataclass(frozen=True)
class GridParams:
    """Three-machine swing-equation network.

    Inertias alternate between ``m_low`` and ``m_high`` every
    ``switch_period`` steps (a coarse daily schedule) with a per-step,
    per-machine uniform fluctuation drawn from ``fluct_range``. Damping is
    unit per machine and the network is a unit-susceptance 3-ring unless
    overridden. These defaults are qualitative: they are chosen so the
    scenario exhibits its intended failure modes, not to reproduce any
    particular physical grid. In particular the default time step samples
    the ~5 s electromechanical oscillation coarsely enough that the
    forward-Euler open loop is (mildly) expansive and stability genuinely
    depends on the controller.
    """

    m_low: float = 2.0
    m_high: float = 8.0
    fluct_range: tuple[float, float] = (0.0, 0.2)
    damping: tuple[float, ...] = (1.0, 1.0, 1.0)
    dt: float = 0.5
    switch_period: int = 50


class _Grid9(SystemProvider):
    d, p = 6, 3
    name = "grid9"

    def __init__(self, params: GridParams | None = None, seed: int = 0):
        self.params = params or GridParams()
        self.seed = int(seed)
        self._L = _ring_laplacian(3)
        self._D = np.diag(self.params.damping)
        if self.params.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.params.dt}")
        if self.params.switch_period < 1:
            raise ConfigError(
                f"switch_period must be >= 1, got {self.params.switch_period}"
            )
        # validate the discretization once at the nominal low inertia
        A, _ = self.matrices(1)
        if spectral_norm(A) > 1e3:
            raise ConfigError(
                "discretized grid dynamics have spectral norm > 1e3; "
                "the time step is too coarse for this network"
            )

    def _inertia(self, t: int) -> np.ndarray:
        base = (
            self.params.m_low
            if ((t - 1) // self.params.switch_period) % 2 == 0
            else self.params.m_high
        )
        lo, hi = self.params.fluct_range
        rng = np.random.default_rng([self.seed, int(t), 1])
        return base + rng.uniform(lo, hi, size=3)

    def matrices(self, t, history=None):
        m = self._inertia(t)
        Minv = np.diag(1.0 / m)
        dt = self.params.dt
        A = np.eye(6)
        A[:3, 3:] += dt * np.eye(3)
        A[3:, :3] -= dt * (Minv @ self._L)
        A[3:, 3:] -= dt * (Minv @ self._D)
        B = np.zeros((6, 3))
        B[3:, :] = dt * Minv
        return A, B


def grid9(params: GridParams | None = None, seed: int = 0) -> SystemProvider:
    """Swing-equation network with switching inertia; state stacks the three
    angles then the three frequencies, controls are per-machine power
    injections."""
    return _Grid9(params=params, seed=seed)


class _Pendulum(SystemProvider):
    """Inverted pendulum, linearized on the fly for the controller while the
    plant integrates the nonlinear dynamics (forward Euler). The gap between
    ``sin theta`` and ``cos(theta_t) theta`` is the model error.

    The default model covariance is anisotropic because the disturbance
    enters through the torque channel: the angle row only integrates the
    velocity, so an isotropic model would demand an unrealizable
    cross-covariance from the synthesizer (the angle row of the closed loop
    is pinned at ``[1, dt]`` no matter the gain).
    """

    d, p = 2, 1
    adaptive = True
    name = "pendulum"
    default_w_model = (1e-4, 1.0)  # diagonal

    def __init__(self, g: float = 9.81, length: float = 1.0, mass: float = 1.0,
                 dt: float = 0.01):
        if min(g, length, mass, dt) <= 0:
            raise ConfigError("g, length, mass, and dt must all be positive")
        self.g = float(g)
        self.length = float(length)
        self.mass = float(mass)
        self.dt = float(dt)

    def _theta(self, history: History | None) -> float:
        if history is not None and history.states:
            return float(history.states[-1][0])
        return 0.0

    def matrices(self, t, history=None):
        theta = self._theta(history)
        dt = self.dt
        A = np.array([
            [1.0, dt],
            [dt * (self.g / self.length) * math.cos(theta), 1.0],
        ])
        B = np.array([[0.0], [dt / (self.mass * self.length ** 2)]])
        return A, B

    def plant_step(self, t, x, u, w, history=None):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        theta, omega = float(x[0]), float(x[1])
        dtheta = self.dt * omega
        domega = self.dt * (
            (self.g / self.length) * math.sin(theta)
            + float(u[0]) / (self.mass * self.length ** 2)
        )
        return np.array([theta + dtheta, omega + domega]) + np.asarray(w, float)


def pendulum(g: float = 9.81, length: float = 1.0, mass: float = 1.0,
             dt: float = 0.01) -> SystemProvider:
    return _Pendulum(g=g, length=length, mass=mass, dt=dt)


class _Adversary(SystemProvider):
    """Adaptive rank-deficient-input chain.

    Controls only reach the first state; on even steps the adversary couples
    the uncontrolled second state to the realized first one with a sign and
    magnitude chosen from the current state, which forces
    ``|x_{t,2}| >= 1.5^k`` at t = 2k+1 for every causal controller acting
    through ``B = [1, 0]^T``.
    """

    d, p = 2, 1
    adaptive = True
    name = "adversary"

    def __init__(self):
        self._B = np.array([[1.0], [0.0]])

    def matrices(self, t, history=None):
        if t % 2 == 1:
            return np.eye(2), self._B
        if history is None or not history.states:
            raise InvalidInputError(
                "adversary dynamics at even steps require the realized history"
            )
        x = np.asarray(history.states[-1], dtype=np.float64)
        x1, x2 = float(x[0]), float(x[1])
        if x1 == 0.0 or x2 == 0.0:
            eps = 0.0
        else:
            eps = 0.5 * abs(x2) / max(abs(x1), 1.0) \
                * math.copysign(1.0, x1) * math.copysign(1.0, x2)
        A = np.array([[1.0, 0.0], [eps, 2.0]])
        return A, self._B

    def growth_floor(self, k: int) -> float:
        """Certified lower bound on ``|x_{2k+1, 2}|`` from ``x_1 = [1, 1]``."""
        return 1.5 ** int(k)


def adversary() -> SystemProvider:
    return _Adversary()


class _RankDeficientPair(SystemProvider):
    """Deterministic (non-adaptive) variant of the adversary's period-2
    pattern with the coupling frozen at ``eps``; single-step synthesis is
    infeasible at every alpha, while any window spanning both phases has a
    full-row-rank lifted input matrix."""

    d, p = 2, 1
    name = "rank-deficient-pair"

    def __init__(self, eps: float = 0.5):
        self.eps = float(eps)
        self._B = np.array([[1.0], [0.0]])
        self._A_odd = np.eye(2)
        self._A_even = np.array([[1.0, 0.0], [self.eps, 2.0]])

    def matrices(self, t, history=None):
        return (self._A_odd if t % 2 == 1 else self._A_even), self._B


def rank_deficient_pair(eps: float = 0.5) -> SystemProvider:
    return _RankDeficientPair(eps=eps)


class _Perturbed(SystemProvider):
    def __init__(self, base: SystemProvider, error_norm: float, seed: int = 0):
        if base.adaptive:
            raise InvalidInputError(
                "perturb requires a non-adaptive base scenario: estimation "
                "error on top of trajectory-dependent truth is ill-defined"
            )
        if error_norm < 0:
            raise InvalidInputError(
                f"error_norm must be nonnegative, got {error_norm}"
            )
        self.base = base
        self.error_norm = float(error_norm)
        self.seed = int(seed)
        self.d, self.p = base.dims
        self.name = f"perturbed-{base.name}"

    def matrices(self, t, history=None):
        return self.base.matrices(t, history)

    def plant_step(self, t, x, u, w, history=None):
        return self.base.plant_step(t, x, u, w, history)

    def _delta(self, t: int, shape: tuple[int, int], tag: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, int(t), 2, tag])
        raw = rng.standard_normal(shape)
        norm = spectral_norm(raw)
        if norm == 0.0:  # pragma: no cover - measure-zero draw
            raw = np.eye(*shape)
            norm = 1.0
        return raw * (self.error_norm / norm)

    def estimates(self, t, history=None):
        A, B = self.base.matrices(t, history)
        if self.error_norm == 0.0:
            return A, B
        return A + self._delta(t, A.shape, 0), B + self._delta(t, B.shape, 1)

    def prediction_window(self, t, H):
        return [self.estimates(s) for s in range(t, t + int(H))]


def perturb(base: SystemProvider, error_norm: float, seed: int = 0) -> SystemProvider:
    """Wrap a scenario so the controller sees estimates with spectral-norm
    error exactly ``error_norm`` (per matrix, per step) while the plant still
    runs on the truth. Perturbations are a pure function of (seed, t)."""
    return _Perturbed(base, error_norm, seed=seed)


SCENARIOS = {
    "switching": switching,
    "sinusoid": sinusoid,
    "grid9": grid9,
    "pendulum": pendulum,
    "adversary": adversary,
    "rank-deficient-pair": rank_deficient_pair,
}


def make_scenario(name: str, seed: int = 0, **params) -> SystemProvider:
    """Instantiate a registered scenario by name. ``seed`` is forwarded to
    scenarios with internal randomness; unknown names raise ConfigError."""
    if name not in SCENARIOS:
        raise ConfigError(
            f"unknown scenario '{name}'; available: {sorted(SCENARIOS)}"
        )
    factory = SCENARIOS[name]
    if name == "grid9":
        grid_fields = set(GridParams.__dataclass_fields__)
        gp = {k: v for k, v in params.items() if k in grid_fields}
        rest = {k: v for k, v in params.items() if k not in grid_fields}
        if rest:
            raise ConfigError(f"unknown grid9 parameters: {sorted(rest)}")
        if "fluct_range" in gp:
            gp["fluct_range"] = tuple(gp["fluct_range"])
        if "damping" in gp:
            gp["damping"] = tuple(gp["damping"])
        return factory(GridParams(**gp), seed=seed)
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for scenario '{name}': {exc}") from exc
