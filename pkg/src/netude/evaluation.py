"""Open-loop rollouts and transfer of learned physics to new graphs.

Anything with a ``rhs(state, adjacency)`` method can be rolled out here: a
trained :class:`~netude.model.UdeModel` or :class:`GroundTruthPhysics`, the
oscillator equations wrapped in the same interface. Wrapping the truth this
way gives an exact self-transfer oracle.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import OscillatorParams, Trajectory, check_adjacency, oscillator_rhs, simulate
from .errors import DivergenceError
from .model import UdeModel, threshold_adjacency


@dataclass(frozen=True)
class GroundTruthPhysics:
    """The oscillator equations behind the same ``rhs`` interface as a model."""

    params: OscillatorParams = OscillatorParams()

    def rhs(self, state, adjacency):
        return oscillator_rhs(state, adjacency, self.params)


@dataclass
class TransferSpec:
    adjacency: np.ndarray
    x0: np.ndarray
    n_steps: int = 500
    dt: float = 0.1
    transient_time: float = 20.0

    def __post_init__(self):
        self.adjacency = check_adjacency(self.adjacency, binary=True)
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.x0.shape != (self.adjacency.shape[0], 2):
            raise ValueError(f"x0 must have shape ({self.adjacency.shape[0]}, 2), got {self.x0.shape}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TransferSpec":
        return cls(np.array(d["adjacency"], dtype=float), np.array(d["x0"], dtype=float),
                   int(d.get("n_steps", 500)), float(d.get("dt", 0.1)),
                   float(d.get("transient_time", 20.0)))

    def to_dict(self) -> dict:
        return {"adjacency": self.adjacency.tolist(), "x0": self.x0.tolist(),
                "n_steps": self.n_steps, "dt": self.dt, "transient_time": self.transient_time}


@dataclass
class EvalReport:
    transient_mse: float
    rollout_mse: float
    amplitude_learned: list[float]
    amplitude_true: list[float]
    amplitude_ratio: list[float]
    split_mse: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def open_loop_rollout(model, x0, n_steps: int, dt: float,
                      adjacency: Optional[np.ndarray] = None) -> Trajectory:
    """Frozen-parameter forward simulation.

    ``adjacency`` overrides the model's own soft matrix (e.g. with its
    thresholded version or a different graph). ``n_steps = 0`` returns just ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if n_steps == 0:
        return Trajectory(dt, x0[None].copy())
    if adjacency is None and isinstance(model, UdeModel):
        adjacency = model.soft_adjacency()
    if adjacency is None:
        raise ValueError("ground-truth physics needs an explicit adjacency")
    return simulate(lambda s: model.rhs(s, adjacency), x0, n_steps, dt)


def limit_cycle_amplitude(traj: Trajectory, tail: float = 0.5) -> np.ndarray:
    """Per-node max |x| over the final ``tail`` fraction of the trajectory."""
    start = int(np.floor(traj.n_steps * (1.0 - tail)))
    return np.max(np.abs(traj.states[start:, :, 0]), axis=0)


def transfer_eval(model, spec: TransferSpec, truth_params: OscillatorParams = OscillatorParams(),
                  truth=None) -> tuple[EvalReport, Trajectory, Trajectory]:
    """Run learned physics and ground truth on ``spec.adjacency`` from the same start.

    Returns the report plus the learned and true trajectories.
    """
    if isinstance(model, UdeModel) and model.n != spec.adjacency.shape[0]:
        model = with_nodes(model, spec.adjacency.shape[0])
    truth = truth if truth is not None else GroundTruthPhysics(truth_params)
    try:
        true_traj = open_loop_rollout(truth, spec.x0, spec.n_steps, spec.dt, spec.adjacency)
    except DivergenceError as exc:
        raise DivergenceError(f"ground-truth system diverged: {exc}", exc.step, "ground truth") from exc
    try:
        learned = open_loop_rollout(model, spec.x0, spec.n_steps, spec.dt, spec.adjacency)
    except DivergenceError as exc:
        raise DivergenceError(f"learned system diverged: {exc}", exc.step, "learned") from exc
    k = min(int(round(spec.transient_time / spec.dt)), true_traj.n_steps)
    diff = learned.states - true_traj.states
    amp_l = limit_cycle_amplitude(learned)
    amp_t = limit_cycle_amplitude(true_traj)
    report = EvalReport(
        transient_mse=float(np.mean(diff[:k] ** 2)),
        rollout_mse=float(np.mean(diff ** 2)),
        amplitude_learned=amp_l.tolist(),
        amplitude_true=amp_t.tolist(),
        amplitude_ratio=(amp_l / amp_t).tolist(),
    )
    return report, learned, true_traj


def with_nodes(model: UdeModel, n: int) -> UdeModel:
    """Same node and coupling networks on an ``n``-node graph.

    The adjacency logits are reset; callers always pass an explicit
    adjacency when rolling out the result.
    """
    out = model.copy()
    out.n = n
    out.params["adj.logits"] = np.zeros(n * n)
    return out


def thresholded_rollout(model: UdeModel, x0, n_steps: int, dt: float) -> Trajectory:
    return open_loop_rollout(model, x0, n_steps, dt, threshold_adjacency(model.soft_adjacency()))
