from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netude import io
from netude.dynamics import (CYCLE3, KuramotoParams, OscillatorParams, Trajectory, fixture_adjacency,
                             kuramoto_rhs, oscillator_rhs, random_adjacency, random_initial_condition,
                             rk4_step, simulate, simulate_oscillators)
from netude.errors import DivergenceError, NonFiniteError, ShapeMismatchError

FIXTURES = Path(__file__).parent / "fixtures"


def test_default_parameters():
    p = OscillatorParams()
    assert (p.a1, p.a2, p.a3, p.a4, p.mu, p.coupling_sign) == (0.2, 11.0, 11.0, 1.0, 0.2, 1)


def test_origin_is_fixed_point():
    for A in (CYCLE3, fixture_adjacency("net11")):
        assert np.array_equal(oscillator_rhs(np.zeros((len(A), 2)), A), np.zeros((len(A), 2)))


def test_single_uncoupled_node_by_hand():
    # dv = -1 - 0.2 * 1 * (11 - 11 + 1) = -1.2
    out = oscillator_rhs(np.array([[1.0, 1.0]]), np.zeros((1, 1)))
    np.testing.assert_allclose(out, [[1.0, -1.2]], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2))
def test_equal_velocities_cancel_coupling(seed, v):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=4)
    state = np.stack([x, np.full(4, v)], axis=1)
    A = random_adjacency(4, 0.5, seed)
    np.testing.assert_array_equal(oscillator_rhs(state, A), oscillator_rhs(state, np.zeros((4, 4))))


def test_coupling_sign_flip():
    state = np.array([[0.0, 1.0], [0.0, 0.0]])
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    plus = oscillator_rhs(state, A, OscillatorParams(a1=0.0))
    minus = oscillator_rhs(state, A, OscillatorParams(a1=0.0, coupling_sign=-1))
    assert plus[0, 1] == pytest.approx(0.2)
    assert minus[0, 1] == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        OscillatorParams(coupling_sign=0)


def test_oscillator_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        oscillator_rhs(np.zeros((3, 2)), np.zeros((2, 2)))


def test_kuramoto_examples():
    A = np.ones((3, 3)) - np.eye(3)
    om = np.array([0.5, 1.0, 2.0])
    np.testing.assert_array_equal(kuramoto_rhs(np.full(3, 0.7), A, KuramotoParams(om, 5.0)), om)
    theta = np.random.default_rng(0).uniform(0, 6, 3)
    np.testing.assert_array_equal(kuramoto_rhs(theta, A, KuramotoParams(om, 0.0)), om)
    two = kuramoto_rhs(np.array([0.0, np.pi / 2]), np.array([[0.0, 1.0], [1.0, 0.0]]),
                       KuramotoParams(np.zeros(2), 2.0))
    np.testing.assert_allclose(two, [-1.0, 1.0], atol=1e-15)
    with pytest.raises(ShapeMismatchError):
        kuramoto_rhs(np.zeros(3), np.zeros((2, 2)), KuramotoParams(np.zeros(3), 1.0))


def test_rk4_zero_rhs_and_exponential():
    x = np.array([1.5, -2.0])
    assert np.array_equal(rk4_step(lambda y: np.zeros_like(y), x, 0.1), x)
    # 1 + h + h^2/2 + h^3/6 + h^4/24 with h = 0.1
    assert rk4_step(lambda y: y, np.array([1.0]), 0.1)[0] == pytest.approx(1.1051708333333334, abs=1e-15)


@pytest.mark.parametrize("lam,dt", [(-2.0, 0.1), (0.5, 0.3), (1.0, 0.05)])
def test_rk4_matches_quartic_taylor_on_linear(lam, dt):
    z = lam * dt
    taylor = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    assert rk4_step(lambda y: lam * y, np.array([1.0]), dt)[0] == pytest.approx(taylor, rel=1e-14)


def test_rk4_reports_stage():
    calls = []

    def rhs(y):
        calls.append(1)
        return y if len(calls) < 3 else y * np.nan

    with pytest.raises(NonFiniteError, match="k3"):
        rk4_step(rhs, np.ones(2), 0.1)


def test_simulate_one_step_equals_rk4_step():
    A = CYCLE3
    x0 = random_initial_condition(3, 5)
    traj = simulate(lambda s: oscillator_rhs(s, A), x0, 1, 0.1)
    assert traj.states.shape == (2, 3, 2)
    assert np.array_equal(traj.states[1], rk4_step(lambda s: oscillator_rhs(s, A), x0, 0.1))


def test_single_oscillator_limit_cycle_is_bounded():
    traj = simulate_oscillators(np.zeros((1, 1)), 500, 0.1, seed=3)
    assert traj.states.shape == (501, 1, 2)
    assert np.max(np.abs(traj.states[:, :, 0])) < 10


def test_simulate_divergence_reports_step():
    with pytest.raises(DivergenceError) as info:
        simulate(lambda y: y * y, np.array([[2.0]]), 100, 0.1)
    assert info.value.step is not None and info.value.step >= 1


def test_simulate_is_deterministic():
    a = simulate_oscillators(fixture_adjacency("net11"), 100, 0.1, seed=4)
    b = simulate_oscillators(fixture_adjacency("net11"), 100, 0.1, seed=4)
    assert np.array_equal(a.states, b.states)


def test_rk4_convergence_order_on_oscillators():
    A = fixture_adjacency("net11")
    x0 = random_initial_condition(11, 0)

    def end(dt):
        return simulate_oscillators(A, int(round(5.0 / dt)), dt, x0=x0).states[-1]

    a, b, c = end(0.1), end(0.05), end(0.025)
    order = np.log2(np.linalg.norm(a - b) / np.linalg.norm(b - c))
    assert 3.8 <= order <= 4.2


def test_random_adjacency_properties():
    A = random_adjacency(11, 0.2, 7)
    assert set(np.unique(A)) <= {0.0, 1.0}
    assert np.all(np.diag(A) == 0)
    assert np.array_equal(A, random_adjacency(11, 0.2, 7))
    assert random_adjacency(30, 1e-6, 1).sum() == 0
    with pytest.raises(ValueError):
        random_adjacency(1, 0.2, 0)
    with pytest.raises(ValueError):
        random_adjacency(5, 1.5, 0)


def test_net11_fixture_frozen():
    A = fixture_adjacency("net11")
    assert A.sum() == 22          # 110 off-diagonal slots at density 0.2
    assert np.array_equal(A, io.load_matrix(FIXTURES / "net11_adjacency.csv"))
    assert not np.array_equal(A, A.T)


def test_cycle3_fixture():
    assert fixture_adjacency("cycle3").tolist() == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
    with pytest.raises(KeyError):
        fixture_adjacency("nope")


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate_oscillators(CYCLE3, 20, 0.1, seed=2)
    path = tmp_path / "traj.csv"
    io.save_trajectory(traj, path)
    back = io.load_trajectory(path)
    assert back.dt == traj.dt
    assert np.array_equal(back.states, traj.states)
    assert back.meta["seed"] == 2 and back.meta["params"]["mu"] == 0.2
    assert path.read_text().splitlines()[0] == "t,node,dim,value"
    assert len(path.read_text().splitlines()) == 1 + 21 * 3 * 2


def test_trajectory_rejects_bad_shape():
    with pytest.raises(ShapeMismatchError):
        Trajectory(0.1, np.zeros((5, 2)))
