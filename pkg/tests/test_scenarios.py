"""Scenario dynamics: pinned matrices, seeded determinism, and the adaptive
chain's growth guarantee checked against several hand-rolled controllers.
"""

import math

import numpy as np
import pytest

from cocolq import scenarios
from cocolq.errors import ConfigError, InvalidInputError


# ---------------------------------------------------------------------------
# switching


def test_switching_matrices():
    sc = scenarios.switching()
    A1, B1 = sc.matrices(1)
    A2, B2 = sc.matrices(2)
    assert np.array_equal(A1, np.array([[0.99, 1.5], [0.0, 0.99]]))
    assert np.array_equal(A2, A1.T)
    assert np.array_equal(B1, np.eye(2))
    assert B1 is B2  # constant input matrix
    A3, _ = sc.matrices(3)
    assert np.array_equal(A3, A1)
    assert sc.dims == (2, 2)
    assert not sc.adaptive


def test_switching_product_is_expansive():
    sc = scenarios.switching()
    A1, _ = sc.matrices(1)
    A2, _ = sc.matrices(2)
    lam = np.max(np.abs(np.linalg.eigvals(A2 @ A1)))
    assert abs(lam - 3.9681217390036005) <= 1e-10
    assert lam >= 2.1051
    # while each factor alone is barely stable
    assert np.max(np.abs(np.linalg.eigvals(A1))) < 1.0


def test_switching_parameter_guards():
    with pytest.raises(InvalidInputError):
        scenarios.switching(rho=1.0)
    with pytest.raises(InvalidInputError):
        scenarios.switching(rho=-0.2)
    with pytest.warns(UserWarning):
        scenarios.switching(a=1.0)  # a <= sqrt(2) loses the expansive product


def test_sinusoid_pattern():
    sc = scenarios.sinusoid()
    A0, _ = sc.matrices(0)
    assert np.allclose(A0, [[0.99, 0.0], [1.0, 0.99]], atol=1e-12)
    for t in range(0, 8):
        A, B = sc.matrices(t)
        assert np.array_equal(B, np.eye(2))
        assert A[0, 1] >= 0.0 and A[1, 0] >= 0.0  # magnitudes, not raw trig
        scale = math.exp(t / 60.0)
        assert abs(A[0, 1] - abs(math.sin(math.pi * t / 2.0)) * scale) <= 1e-12
        assert abs(A[1, 0] - abs(math.cos(math.pi * t / 2.0)) * scale) <= 1e-12


# ---------------------------------------------------------------------------
# grid


def test_grid_block_structure():
    sc = scenarios.grid9()
    dt = scenarios.GridParams().dt
    A, B = sc.matrices(1)
    assert A.shape == (6, 6) and B.shape == (6, 3)
    # angle rows integrate frequency with unit scaling
    assert np.array_equal(A[:3, 3:], dt * np.eye(3))
    assert np.array_equal(A[:3, :3], np.eye(3))
    # network coupling preserves the Laplacian's zero row sums
    assert np.max(np.abs(A[3:, :3].sum(axis=1))) <= 1e-12
    assert np.max(np.abs(B[:3, :])) == 0.0  # power enters the frequency rows


def test_grid_seed_determinism():
    a = scenarios.grid9(seed=4)
    b = scenarios.grid9(seed=4)
    c = scenarios.grid9(seed=5)
    for t in (1, 2, 17, 50, 51):
        Aa, Ba = a.matrices(t)
        Ab, Bb = b.matrices(t)
        assert np.array_equal(Aa, Ab)
        assert np.array_equal(Ba, Bb)
    assert not np.array_equal(a.matrices(1)[0], c.matrices(1)[0])


def test_grid_inertia_switching():
    params = scenarios.GridParams(fluct_range=(0.0, 0.0), switch_period=10)
    sc = scenarios.grid9(params)
    A_lo, _ = sc.matrices(1)
    assert np.array_equal(sc.matrices(10)[0], A_lo)  # constant inside period
    A_hi, _ = sc.matrices(11)
    assert not np.array_equal(A_hi, A_lo)
    assert np.array_equal(sc.matrices(21)[0], A_lo)  # back to low inertia
    # heavier machines respond less to the same torque
    assert np.max(np.abs(A_hi[3:, :3])) < np.max(np.abs(A_lo[3:, :3]))


def test_grid_rejects_bad_params():
    with pytest.raises(ConfigError):
        scenarios.grid9(scenarios.GridParams(dt=-0.1))
    with pytest.raises(ConfigError):
        scenarios.grid9(scenarios.GridParams(switch_period=0))
    with pytest.raises(ConfigError):
        scenarios.grid9(scenarios.GridParams(dt=1e6))  # blows past norm cap


# ---------------------------------------------------------------------------
# pendulum


def test_pendulum_linearization_tracks_history():
    sc = scenarios.pendulum()
    assert sc.adaptive
    assert sc.default_w_model == (1e-4, 1.0)
    A0, B0 = sc.matrices(1, None)  # empty history linearizes at the top
    assert np.allclose(A0, [[1.0, 0.01], [0.0981, 1.0]], atol=1e-12)
    assert np.allclose(B0, [[0.0], [0.01]], atol=1e-15)

    hist = scenarios.History(states=[np.array([1.2, 0.0])])
    A, _ = sc.matrices(1, hist)
    assert abs(A[1, 0] - 0.01 * 9.81 * math.cos(1.2)) <= 1e-12
    with pytest.raises(InvalidInputError):
        sc.prediction_window(1, 2)


def test_pendulum_plant_is_nonlinear():
    sc = scenarios.pendulum()
    x = np.array([0.5, -0.3])
    u = np.array([2.0])
    w = np.array([0.001, -0.002])
    nxt = sc.plant_step(1, x, u, w)
    expect = np.array([
        0.5 + 0.01 * (-0.3),
        -0.3 + 0.01 * (9.81 * math.sin(0.5) + 2.0),
    ]) + w
    assert np.max(np.abs(nxt - expect)) <= 1e-12
    with pytest.raises(ConfigError):
        scenarios.pendulum(dt=0.0)


# ---------------------------------------------------------------------------
# adversary


def run_adversary(policy, steps=80):
    sc = scenarios.adversary()
    hist = scenarios.History(states=[np.array([1.0, 1.0])], controls=[])
    for t in range(1, steps + 1):
        x = hist.states[-1]
        u = np.atleast_1d(np.asarray(policy(t, x), dtype=float))
        nxt = sc.plant_step(t, x, u, np.zeros(2), hist)
        hist.controls.append(u)
        hist.states.append(nxt)
    return sc, hist.states


@pytest.mark.parametrize("policy", [
    lambda t, x: 0.0,                      # do nothing
    lambda t, x: -x[0],                    # cancel the first state
    lambda t, x: -0.9 * x[0] + 0.1 * x[1],  # something vaguely clever
], ids=["zero", "cancel", "mixed"])
def test_adversary_growth_floor_any_policy(policy):
    sc, states = run_adversary(policy)
    for k in range(1, 41):
        got = abs(float(states[2 * k][1]))
        assert got >= sc.growth_floor(k) - 1e-9, (
            f"k={k}: |x_2| = {got:.4g} < {sc.growth_floor(k):.4g}")


def test_adversary_structure():
    sc = scenarios.adversary()
    A, B = sc.matrices(1)
    assert np.array_equal(A, np.eye(2))
    assert np.array_equal(B, [[1.0], [0.0]])
    with pytest.raises(InvalidInputError):
        sc.matrices(2)  # even steps need the realized state
    hist = scenarios.History(states=[np.array([2.0, -3.0])])
    A2, _ = sc.matrices(2, hist)
    # eps = 0.5 |x2| / max(|x1|, 1) sign(x1) sign(x2)
    assert abs(A2[1, 0] - (-0.75)) <= 1e-15
    assert A2[1, 1] == 2.0
    zero_hist = scenarios.History(states=[np.array([0.0, 5.0])])
    assert scenarios.adversary().matrices(2, zero_hist)[0][1, 0] == 0.0
    with pytest.raises(InvalidInputError):
        sc.prediction_window(1, 2)


def test_rank_deficient_pair():
    sc = scenarios.rank_deficient_pair()
    assert not sc.adaptive
    A1, B = sc.matrices(1)
    A2, _ = sc.matrices(2)
    assert np.array_equal(A1, np.eye(2))
    assert np.array_equal(A2, [[1.0, 0.0], [0.5, 2.0]])
    assert np.array_equal(B, [[1.0], [0.0]])
    assert np.array_equal(sc.matrices(3)[0], A1)
    window = sc.prediction_window(1, 2)
    assert len(window) == 2
    eps3 = scenarios.rank_deficient_pair(eps=0.3)
    assert eps3.matrices(2)[0][1, 0] == 0.3


# ---------------------------------------------------------------------------
# perturbation wrapper


def test_perturb_contract():
    base = scenarios.switching()
    sc = scenarios.perturb(base, 0.05, seed=9)
    A_true, B_true = sc.matrices(3)
    assert np.array_equal(A_true, base.matrices(3)[0])  # plant unchanged
    A_est, B_est = sc.estimates(3)
    dA = A_est - A_true
    dB = B_est - B_true
    assert abs(np.linalg.norm(dA, 2) - 0.05) <= 1e-12
    assert abs(np.linalg.norm(dB, 2) - 0.05) <= 1e-12
    # pure function of (seed, t)
    A_again, _ = scenarios.perturb(base, 0.05, seed=9).estimates(3)
    assert np.array_equal(A_est, A_again)
    assert not np.array_equal(
        A_est, scenarios.perturb(base, 0.05, seed=10).estimates(3)[0])
    window = sc.prediction_window(1, 3)
    assert len(window) == 3


def test_perturb_guards():
    with pytest.raises(InvalidInputError):
        scenarios.perturb(scenarios.pendulum(), 0.1)  # adaptive truth
    with pytest.raises(InvalidInputError):
        scenarios.perturb(scenarios.switching(), -0.1)
    clean = scenarios.perturb(scenarios.switching(), 0.0)
    A, _ = clean.estimates(1)
    assert np.array_equal(A, scenarios.switching().matrices(1)[0])


# ---------------------------------------------------------------------------
# registry


def test_make_scenario():
    sc = scenarios.make_scenario("switching", a=2.0)
    assert sc.matrices(1)[0][0, 1] == 2.0
    grid = scenarios.make_scenario("grid9", seed=3, m_low=1.5, dt=0.2)
    assert grid.params.m_low == 1.5
    assert grid.params.dt == 0.2
    assert grid.seed == 3
    with pytest.raises(ConfigError):
        scenarios.make_scenario("nope")
    with pytest.raises(ConfigError):
        scenarios.make_scenario("grid9", not_a_field=1)
    with pytest.raises(ConfigError):
        scenarios.make_scenario("switching", bogus=True)
    assert set(scenarios.SCENARIOS) == {
        "switching", "sinusoid", "grid9", "pendulum", "adversary",
        "rank-deficient-pair",
    }
