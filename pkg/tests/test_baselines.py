"""Riccati baselines against closed forms and scipy's DARE solver."""

import math

import numpy as np
import pytest
import scipy.linalg

from cocolq import baselines, controller, sdp
from cocolq.errors import InvalidInputError, NotStabilizableError
from cocolq.linalg import lyapunov_discrete

PHI = (1.0 + math.sqrt(5.0)) / 2.0


def scipy_gain(A, B, Q, R):
    P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def test_scalar_golden_ratio():
    one = np.eye(1)
    res = baselines.dare(one, one, one, one)
    assert abs(float(res.P[0, 0]) - PHI) <= 1e-10
    assert abs(float(res.K[0, 0]) + 1.0 / PHI) <= 1e-10
    assert res.residual <= 1e-9 * (1.0 + float(res.P[0, 0]))


def test_matches_scipy_on_random_systems():
    rng = np.random.default_rng(2)
    for trial in range(15):
        d = int(rng.integers(1, 5))
        p = int(rng.integers(1, 4))
        A = rng.standard_normal((d, d))
        B = rng.standard_normal((d, p))
        Q = np.eye(d) * float(rng.uniform(0.2, 3.0))
        R = np.eye(p) * float(rng.uniform(0.2, 3.0))
        try:
            res = baselines.dare(A, B, Q, R)
        except NotStabilizableError:
            continue
        K_ref = scipy_gain(A, B, Q, R)
        err = np.max(np.abs(res.K - K_ref))
        assert err <= 1e-7 * (1.0 + np.abs(K_ref).max()), f"trial {trial}: {err:.3e}"


def test_zero_dynamics_edge_cases():
    # A = 0: nothing to control, P = Q and K = 0
    res = baselines.dare(np.zeros((2, 2)), np.eye(2), 2.0 * np.eye(2), np.eye(2))
    assert np.allclose(res.P, 2.0 * np.eye(2), atol=1e-12)
    assert np.max(np.abs(res.K)) <= 1e-12

    # B = 0 with stable A: P is the closed-form Lyapunov accumulation of Q
    A = np.array([[0.5, 0.2], [0.0, 0.3]])
    res = baselines.dare(A, np.zeros((2, 1)), np.eye(2), np.eye(1))
    P_ref = lyapunov_discrete(A.T, np.eye(2))
    assert np.max(np.abs(res.P - P_ref)) <= 1e-8


def test_unstabilizable_raises():
    with pytest.raises(NotStabilizableError):
        baselines.dare(np.array([[2.0]]), np.zeros((1, 1)), np.eye(1), np.eye(1))
    # decoupled unstable mode the input never reaches
    with pytest.raises(NotStabilizableError):
        baselines.dare(np.array([[2.0, 0.0], [0.0, 0.5]]),
                       np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))


def test_input_validation():
    with pytest.raises(InvalidInputError):
        baselines.dare(np.eye(2), np.eye(3), np.eye(2), np.eye(3))
    with pytest.raises(InvalidInputError):
        baselines.dare(np.eye(1), np.eye(1), np.eye(1), np.eye(1), damping=0.0)
    with pytest.raises(InvalidInputError):
        baselines.offline_optimal([], np.eye(2), np.eye(2))


def test_naive_step_is_dare_gain():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((2, 2)) * 0.5
    B = rng.standard_normal((2, 2))
    K = baselines.naive_lti_step(A, B, np.eye(2), np.eye(2))
    assert np.array_equal(K, baselines.dare(A, B, np.eye(2), np.eye(2)).K)


def reference_backward_gains(systems, Q, R):
    # independent re-derivation of the finite-horizon recursion
    P = Q.copy()
    out = []
    for A, B in reversed(systems):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A + B @ K)
        P = 0.5 * (P + P.T)
        out.append(K)
    out.reverse()
    return out


def test_offline_optimal_backward_recursion():
    rng = np.random.default_rng(7)
    systems = [(rng.standard_normal((2, 2)), rng.standard_normal((2, 1)))
               for _ in range(6)]
    Q, R = 0.2 * np.eye(2), np.eye(1)
    gains = baselines.offline_optimal(systems, Q, R)
    ref = reference_backward_gains(systems, Q, R)
    assert len(gains) == 6
    for K, K_ref in zip(gains, ref):
        assert np.max(np.abs(K - K_ref)) <= 1e-10


def test_offline_optimal_beats_any_linear_policy():
    """No state-feedback sequence does better on the deterministic rollout."""
    rng = np.random.default_rng(11)
    systems = [(rng.standard_normal((2, 2)) * 0.8, rng.standard_normal((2, 2)))
               for _ in range(5)]
    Q, R = np.eye(2), np.eye(2)
    x0 = np.array([1.0, -2.0])

    def rollout_cost(gains):
        x, total = x0.copy(), 0.0
        for (A, B), K in zip(systems, gains):
            u = K @ x
            total += float(x @ Q @ x + u @ R @ u)
            x = A @ x + B @ u
        return total + float(x @ Q @ x)  # terminal

    opt = rollout_cost(baselines.offline_optimal(systems, Q, R))
    for _ in range(20):
        rand_gains = [rng.standard_normal((2, 2)) * 0.5 for _ in systems]
        assert opt <= rollout_cost(rand_gains) + 1e-9


def test_h_horizon_window_gains():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 1))
    Q, R = np.eye(2), np.eye(1)
    # H = 1: single one-step gain with terminal weight Q
    (K,) = baselines.h_horizon_step([(A, B)], Q, R)
    K_ref = -np.linalg.solve(R + B.T @ Q @ B, B.T @ Q @ A)
    assert np.max(np.abs(K - K_ref)) <= 1e-12
    # longer window returns one gain per step
    window = [(A, B), (A.T, B), (A, 2.0 * B)]
    gains = baselines.h_horizon_step(window, Q, R)
    assert len(gains) == 3
    assert all(g.shape == (1, 2) for g in gains)


def test_lqr_sdp_route_agrees_with_dare():
    """The stationarity-only program (no covariance cap) must reproduce the
    infinite-horizon Riccati gain — two very different routes to one answer."""
    rng = np.random.default_rng(17)
    settings = sdp.SdpSettings(tol_gap=1e-10, tol_feas=1e-10, max_iter=400)
    checked = 0
    for trial in range(20):
        d = int(rng.integers(1, 4))
        p = int(rng.integers(1, 4))
        A = rng.standard_normal((d, d)) * 0.3
        B = rng.standard_normal((d, p))
        if np.linalg.matrix_rank(B) < min(d, p):  # pragma: no cover
            continue
        Q = np.eye(d) * float(rng.uniform(0.5, 2.0))
        R = np.eye(p) * float(rng.uniform(0.5, 2.0))
        prob = controller.build_lqr_sdp(A, B, Q, R, np.eye(d), settings)
        sol = sdp.solve(prob)
        assert sol.status == sdp.SdpStatus.OPTIMAL, f"trial {trial}"
        K, _ = controller.extract_gain(sol.primal[0], d, p)
        K_ref = baselines.dare(A, B, Q, R).K
        err = np.max(np.abs(K - K_ref))
        assert err <= 1e-5, f"trial {trial} (d={d}, p={p}): {err:.3e}"
        checked += 1
    assert checked == 20
