"""Ground-truth networked systems and a plain RK4 integrator.

Two generators are provided:

* the coupled self-excited oscillator used for structure inference,
  ``dx_i/dt = v_i`` and
  ``dv_i/dt = -x_i - a1 v_i (a2 x_i^4 - a3 x_i + a4) + s mu sum_j A_ij (v_i - v_j)``
  with ``s = coupling_sign`` (+1 by default);
* the Kuramoto phase oscillator restricted to a graph,
  ``dtheta_i/dt = omega_i + (K/N) sum_j A_ij sin(theta_i - theta_j)``.

Adjacency matrices are plain ``(N, N)`` float arrays; row ``i`` lists the
nodes that drive node ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, NonFiniteError, ShapeMismatchError

DIVERGENCE_LIMIT = 1e6

CYCLE3 = np.array([[0.0, 1.0, 0.0],
                   [0.0, 0.0, 1.0],
                   [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class OscillatorParams:
    a1: float = 0.2
    a2: float = 11.0
    a3: float = 11.0
    a4: float = 1.0
    mu: float = 0.2
    coupling_sign: int = 1

    def __post_init__(self):
        if self.coupling_sign not in (1, -1):
            raise ValueError(f"coupling_sign must be +1 or -1, got {self.coupling_sign}")

    def to_dict(self) -> dict:
        return {"a1": self.a1, "a2": self.a2, "a3": self.a3, "a4": self.a4,
                "mu": self.mu, "coupling_sign": self.coupling_sign}


@dataclass(frozen=True)
class KuramotoParams:
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    K: float = 1.0

    def to_dict(self) -> dict:
        return {"omega": np.asarray(self.omega, dtype=float).tolist(), "K": self.K}


@dataclass
class Trajectory:
    """States sampled every ``dt``; ``states`` has shape (T, N, d)."""

    dt: float
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 3 or self.states.shape[0] < 1:
            raise ShapeMismatchError(f"trajectory states must be (T, N, d), got {self.states.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.states.shape[1]

    @property
    def node_dim(self) -> int:
        return self.states.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def check_adjacency(A, n: int | None = None, binary: bool = False) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"adjacency must be square, got shape {A.shape}")
    if n is not None and A.shape[0] != n:
        raise ShapeMismatchError(f"adjacency is {A.shape[0]}x{A.shape[0]} but system has {n} nodes")
    if binary:
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency must be binary")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency must have a zero diagonal")
    return A


def oscillator_rhs(state, A, p: OscillatorParams = OscillatorParams()) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 2 or state.shape[1] != 2:
        raise ShapeMismatchError(f"oscillator state must be (N, 2), got {state.shape}")
    A = check_adjacency(A, state.shape[0])
    x, v = state[:, 0], state[:, 1]
    coupling = (A * (v[:, None] - v[None, :])).sum(axis=1)
    dv = -x - p.a1 * v * (p.a2 * x**4 - p.a3 * x + p.a4) + p.coupling_sign * p.mu * coupling
    return np.stack([v, dv], axis=1)


def kuramoto_rhs(theta, A, p: KuramotoParams) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ShapeMismatchError(f"phases must be a vector, got shape {theta.shape}")
    n = theta.shape[0]
    A = check_adjacency(A, n)
    omega = np.broadcast_to(np.asarray(p.omega, dtype=np.float64), (n,))
    diff = theta[:, None] - theta[None, :]
    return omega + (p.K / n) * (A * np.sin(diff)).sum(axis=1)


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], state, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.asarray(state, dtype=np.float64)
    k1 = rhs(y)
    _check_stage(k1, 1)
    k2 = rhs(y + 0.5 * dt * k1)
    _check_stage(k2, 2)
    k3 = rhs(y + 0.5 * dt * k2)
    _check_stage(k3, 3)
    k4 = rhs(y + dt * k3)
    _check_stage(k4, 4)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_stage(k, stage):
    if not np.all(np.isfinite(k)):
        raise NonFiniteError(f"RK4 stage k{stage} is not finite")


def simulate(rhs, x0, steps: int, dt: float, meta: dict | None = None) -> Trajectory:
    """Integrate ``steps`` RK4 steps; the result holds ``steps + 1`` states.

    ``x0`` may be (N, d) or (N,) (scalar node state, e.g. Kuramoto phases).
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x0, dtype=np.float64)
    squeeze = x.ndim == 1
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for k in range(1, steps + 1):
        try:
            x = rk4_step(rhs, x, dt)
        except NonFiniteError as exc:
            raise DivergenceError(f"simulation diverged at step {k}: {exc}", step=k) from exc
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"simulation diverged at step {k}: |state| > {DIVERGENCE_LIMIT:g}",
                                  step=k)
        out[k] = x
    if squeeze:
        out = out[:, :, None]
    return Trajectory(dt, out, dict(meta or {}))


def random_adjacency(n: int, density: float, seed: int) -> np.ndarray:
    """Directed binary graph; each off-diagonal entry is 1 with prob ``density``."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not 0 < density < 1:
        raise ValueError(f"density must lie in (0, 1), got {density}")
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) < density).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    return A


def random_initial_condition(n: int, seed: int, node_dim: int = 2) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, node_dim))


def fixture_adjacency(name: str) -> np.ndarray:
    """Named ground-truth graphs: ``cycle3`` and ``net11`` (11 nodes, density 0.2, seed 7)."""
    if name == "cycle3":
        return CYCLE3.copy()
    if name == "net11":
        return random_adjacency(11, 0.2, 7)
    raise KeyError(f"unknown adjacency fixture {name!r}; choose 'cycle3' or 'net11'")


def simulate_oscillators(A, steps: int = 500, dt: float = 0.1, seed: int = 0,
                         params: OscillatorParams = OscillatorParams(), x0=None) -> Trajectory:
    """Ground-truth data set: oscillator network from a seeded uniform [-1, 1] start."""
    A = check_adjacency(A)
    if x0 is None:
        x0 = random_initial_condition(A.shape[0], seed)
    meta = {"system": "oscillator", "params": params.to_dict(), "seed": seed}
    return simulate(lambda s: oscillator_rhs(s, A, params), x0, steps, dt, meta)
