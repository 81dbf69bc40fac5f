"""Universal-differential-equation surrogate for second-order node networks.

For node ``i`` with state ``(x_i, v_i)`` the model is::

    dx_i/dt = v_i
    dv_i/dt = f(x_i, v_i) + sum_{j != i} A_ij g(x_i, v_i, x_j, v_j)
    A       = sigmoid(reshape(logits, (N, N)) - I / epsilon)

where ``f`` (node physics) and ``g`` (coupling physics) are small
leaky-ReLU MLPs shared by every node and edge. Parameters live in a flat
``dict`` of float64 arrays on :class:`UdeModel`; :meth:`UdeModel.on_tape`
puts them on an autodiff tape to get a differentiable right-hand side and
RK4 rollout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, ShapeMismatchError

NODE_DIM = 2


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activation": "leaky_relu", "slope": self.slope}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), float(d.get("slope", 0.01)))


NODE_NET = MlpSpec((2, 50, 50, 1))
COUPLING_NET = MlpSpec((4, 4, 1))


@dataclass
class UdeModel:
    n: int
    nn1: MlpSpec
    nn2: MlpSpec
    epsilon: float
    params: dict[str, np.ndarray]
    seed: int = 0
    provenance: dict = field(default_factory=dict)
    node_dim: int = NODE_DIM

    def copy(self) -> "UdeModel":
        return UdeModel(self.n, self.nn1, self.nn2, self.epsilon,
                        {k: v.copy() for k, v in self.params.items()},
                        self.seed, json.loads(json.dumps(self.provenance)), self.node_dim)

    def soft_adjacency(self) -> np.ndarray:
        logits = self.params["adj.logits"].reshape(self.n, self.n)
        return ad._sigmoid(logits - np.eye(self.n) / self.epsilon)

    def on_tape(self, tape: ad.Tape, trainable: bool = True,
                adjacency: Optional[np.ndarray] = None) -> "TapedUde":
        """Register parameters as leaves; ``adjacency`` swaps in a fixed matrix."""
        leaves = {k: tape.leaf(v, trainable=trainable) for k, v in self.params.items()}
        return TapedUde(self, tape, leaves, adjacency)

    def rhs(self, state, adjacency: Optional[np.ndarray] = None) -> np.ndarray:
        """Plain numpy right-hand side, no tape. ``state`` is (..., N, 2)."""
        s = np.asarray(state, dtype=np.float64)
        A = self.soft_adjacency() if adjacency is None else np.asarray(adjacency, dtype=np.float64)
        A = A * (1.0 - np.eye(self.n))
        f = _mlp_numpy(self.params, "nn1", self.nn1, s)[..., 0]
        n = s.shape[-2]
        lead = s.shape[:-2]
        pairs = np.concatenate([np.broadcast_to(s[..., :, None, :], lead + (n, n, 2)),
                                np.broadcast_to(s[..., None, :, :], lead + (n, n, 2))], axis=-1)
        g = _mlp_numpy(self.params, "nn2", self.nn2, pairs)[..., 0]
        dv = f + (g * A).sum(axis=-1)
        return np.stack([s[..., 1], dv], axis=-1)


def _mlp_numpy(params, prefix, spec: MlpSpec, h):
    for k in range(spec.n_layers):
        h = h @ params[f"{prefix}.W{k}"].T + params[f"{prefix}.b{k}"]
        if k < spec.n_layers - 1:
            h = np.where(h > 0, h, spec.slope * h)
    return h


class TapedUde:
    """A :class:`UdeModel` whose parameters are leaves on one tape."""

    def __init__(self, model: UdeModel, tape: ad.Tape, leaves: dict[str, ad.Var],
                 adjacency: Optional[np.ndarray] = None):
        self.model = model
        self.tape = tape
        self.leaves = leaves
        self.fixed_adjacency = adjacency
        self._adj = None
        self._mask = None

    def adjacency(self) -> ad.Var:
        if self._adj is None:
            if self.fixed_adjacency is not None:
                self._adj = self.tape.const(self.fixed_adjacency)
            else:
                self._adj = adjacency_from_params(self)
        return self._adj

    def mlp(self, prefix: str, spec: MlpSpec, h: ad.Var) -> ad.Var:
        for k in range(spec.n_layers):
            h = ad.linear(h, self.leaves[f"{prefix}.W{k}"], self.leaves[f"{prefix}.b{k}"])
            if k < spec.n_layers - 1:
                h = ad.leaky_relu(h, spec.slope)
        return h

    def off_diagonal_mask(self) -> ad.Var:
        if self._mask is None:
            self._mask = self.tape.const(1.0 - np.eye(self.model.n))
        return self._mask


def init_model(n: int, nn1: MlpSpec = NODE_NET, nn2: MlpSpec = COUPLING_NET,
               epsilon: float = 0.01, seed: int = 0) -> UdeModel:
    """Seeded uniform(+-1/sqrt(fan_in)) weights, zero biases, zero adjacency logits."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if nn1.widths[0] != NODE_DIM or nn1.widths[-1] != 1:
        raise ValueError(f"node network must map 2 -> 1, got {nn1.widths}")
    if nn2.widths[0] != 2 * NODE_DIM or nn2.widths[-1] != 1:
        raise ValueError(f"coupling network must map 4 -> 1, got {nn2.widths}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for prefix, spec in (("nn1", nn1), ("nn2", nn2)):
        for k in range(spec.n_layers):
            fan_in, fan_out = spec.widths[k], spec.widths[k + 1]
            bound = 1.0 / np.sqrt(fan_in)
            params[f"{prefix}.W{k}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            params[f"{prefix}.b{k}"] = np.zeros(fan_out)
    params["adj.logits"] = np.zeros(n * n)
    return UdeModel(n, nn1, nn2, float(epsilon), params, seed)


def adjacency_from_params(tm: TapedUde) -> ad.Var:
    n = tm.model.n
    logits = tm.leaves["adj.logits"]
    if logits.shape != (n * n,):
        raise ShapeMismatchError(f"adjacency logits must have length {n * n}, got {logits.shape}")
    shifted = ad.sub_const(ad.reshape(logits, (n, n)), np.eye(n) / tm.model.epsilon)
    return ad.sigmoid(shifted)


def ude_rhs(tm: TapedUde, state: ad.Var) -> ad.Var:
    """Differentiable right-hand side for a (..., N, 2) state."""
    n = tm.model.n
    if state.shape[-2:] != (n, NODE_DIM):
        raise ShapeMismatchError(f"state must end in ({n}, {NODE_DIM}), got {state.shape}")
    v = ad.take(state, 1, axis=-1)
    f = ad.take(tm.mlp("nn1", tm.model.nn1, state), 0, axis=-1)
    g = ad.take(tm.mlp("nn2", tm.model.nn2, ad.pair_concat(state)), 0, axis=-1)
    # the j == i term is dropped outright, on top of the -I/eps suppression
    A = ad.mul(tm.adjacency(), tm.off_diagonal_mask())
    dv = ad.add(f, ad.neighbor_sum(g, A))
    return ad.stack([v, dv], axis=-1)


def rk4_step(tm: TapedUde, y: ad.Var, dt: float) -> ad.Var:
    k1 = ude_rhs(tm, y)
    k2 = ude_rhs(tm, y + k1 * (0.5 * dt))
    k3 = ude_rhs(tm, y + k2 * (0.5 * dt))
    k4 = ude_rhs(tm, y + k3 * dt)
    return y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)


def rollout(tm: TapedUde, x0: ad.Var, n_steps: int, dt: float) -> list[ad.Var]:
    """``n_steps`` RK4 steps on the tape; returns the states after each step."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    states = []
    y = x0
    for k in range(1, n_steps + 1):
        y = rk4_step(tm, y, dt)
        if not np.all(np.isfinite(y.value)):
            raise DivergenceError(f"rollout produced non-finite state at step {k}", step=k)
        states.append(y)
    return states


def threshold_adjacency(A) -> np.ndarray:
    """Round to the nearest integer (0.5 goes to 1) and zero the diagonal."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"adjacency must be square, got {A.shape}")
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError("soft adjacency entries must lie in [0, 1]")
    out = np.floor(A + 0.5)
    np.fill_diagonal(out, 0.0)
    return out


# -- checkpoints ------------------------------------------------------------

def model_to_dict(model: UdeModel) -> dict:
    return {
        "format": "netude-checkpoint/1",
        "n": model.n,
        "node_dim": model.node_dim,
        "epsilon": model.epsilon,
        "seed": model.seed,
        "nn1": model.nn1.to_dict(),
        "nn2": model.nn2.to_dict(),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.params.items()},
        "provenance": model.provenance,
    }


def model_from_dict(d: dict) -> UdeModel:
    params = {k: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
              for k, p in d["params"].items()}
    model = UdeModel(int(d["n"]), MlpSpec.from_dict(d["nn1"]), MlpSpec.from_dict(d["nn2"]),
                     float(d["epsilon"]), params, int(d.get("seed", 0)),
                     dict(d.get("provenance", {})), int(d.get("node_dim", NODE_DIM)))
    expected = init_model(model.n, model.nn1, model.nn2, model.epsilon).params
    for k, v in expected.items():
        if k not in params or params[k].shape != v.shape:
            raise ValueError(f"checkpoint parameter {k} missing or mis-shaped")
    return model


def save_checkpoint(model: UdeModel, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> UdeModel:
    return model_from_dict(json.loads(Path(path).read_text()))
