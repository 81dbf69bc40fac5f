"""Reverse-mode automatic differentiation on a dynamic tape.

A :class:`Tape` records every operation applied to :class:`Var` handles in
creation order. Each recorded node keeps its forward value, the ids of its
parents and two closures: one recomputing the value from the parent values
(used by :meth:`Tape.replay`) and one mapping the output adjoint to the
parent adjoints (the vector-Jacobian product).

The tape is rebuilt from scratch for every loss evaluation, e.g.::

    tape = Tape()
    w = tape.leaf(np.array([0.3]), trainable=True)
    loss = ad.sum(ad.square(w * 2.0))
    grads = tape.backward(loss)        # {w: array([0.72])}

Everything is float64. Binary elementwise ops require equal shapes; the only
broadcast is multiplication by a Python scalar. The batched helpers at the
bottom of the module (``linear``, ``pair_concat``, ``neighbor_sum``, ...)
exist so that a whole batch of windows can go through one node per layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError

__all__ = [
    "Tape", "Var", "GraphNode",
    "add", "sub", "mul", "scale", "neg", "sigmoid", "leaky_relu", "square",
    "matvec", "sum", "mean_sq_err", "l1_sum",
    "linear", "reshape", "take", "stack", "pair_concat", "neighbor_sum",
    "sub_const",
]


@dataclass
class GraphNode:
    id: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    forward: Optional[Callable[..., np.ndarray]] = None
    vjp: Optional[Callable[..., tuple]] = None
    adjoint: Optional[np.ndarray] = None


@dataclass
class Tape:
    """Append-only record of a computation; one tape per thread of work."""

    nodes: list[GraphNode] = field(default_factory=list)
    trainable: list[int] = field(default_factory=list)

    def leaf(self, value, trainable: bool = False) -> "Var":
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"leaf value contains non-finite entries (shape {arr.shape})")
        node = GraphNode(len(self.nodes), "leaf", (), arr)
        self.nodes.append(node)
        if trainable:
            self.trainable.append(node.id)
        return Var(self, node.id)

    def const(self, value) -> "Var":
        return self.leaf(value, trainable=False)

    def record(self, op: str, parents: Sequence["Var"], forward, vjp) -> "Var":
        for p in parents:
            if p.tape is not self:
                raise ValueError(f"{op}: operand belongs to a different tape")
        ids = tuple(p.id for p in parents)
        value = forward(*(self.nodes[i].value for i in ids))
        node = GraphNode(len(self.nodes), op, ids, value, forward, vjp)
        self.nodes.append(node)
        return Var(self, node.id)

    def backward(self, root: "Var") -> dict["Var", np.ndarray]:
        """Gradients of scalar ``root`` w.r.t. every trainable leaf.

        Leaves with no path to the root get exact zeros.
        """
        rnode = self.nodes[root.id]
        if rnode.value.size != 1:
            raise ShapeMismatchError(
                f"backward needs a scalar root, got shape {rnode.value.shape}")
        for node in self.nodes:
            node.adjoint = None
        rnode.adjoint = np.ones_like(rnode.value)
        for node in reversed(self.nodes[: root.id + 1]):
            if node.adjoint is None or node.vjp is None:
                continue
            pvals = [self.nodes[i].value for i in node.parents]
            pgrads = node.vjp(node.adjoint, node.value, *pvals)
            for pid, g in zip(node.parents, pgrads):
                if g is None:
                    continue
                parent = self.nodes[pid]
                # never accumulate in place: a vjp may hand back its input array
                if parent.adjoint is None:
                    parent.adjoint = np.asarray(g, dtype=np.float64)
                else:
                    parent.adjoint = parent.adjoint + g
        out = {}
        for tid in self.trainable:
            node = self.nodes[tid]
            adj = node.adjoint if node.adjoint is not None else np.zeros_like(node.value)
            out[Var(self, tid)] = adj
        return out

    def replay(self, leaf_values: Optional[dict[int, np.ndarray]] = None) -> list[np.ndarray]:
        """Recompute every node value in order, optionally swapping leaf values."""
        leaf_values = leaf_values or {}
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.forward is None:
                vals.append(np.asarray(leaf_values.get(node.id, node.value), dtype=np.float64))
            else:
                vals.append(node.forward(*(vals[i] for i in node.parents)))
        return vals


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __hash__(self):
        return hash((id(self.tape), self.id))

    def __eq__(self, other):
        return isinstance(other, Var) and other.tape is self.tape and other.id == self.id

    def __repr__(self):
        return f"Var(id={self.id}, op={self.tape.nodes[self.id].op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _same_shape(op: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ------------------------------------------------------------

def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record("add", (a, b), np.add, lambda g, out, x, y: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record("sub", (a, b), np.subtract, lambda g, out, x, y: (g, -g))


def mul(a: Var, b: Var) -> Var:
    _same_shape("mul", a, b)
    return a.tape.record("mul", (a, b), np.multiply, lambda g, out, x, y: (g * y, g * x))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.record("scale", (a,), lambda x: x * c, lambda g, out, x: (g * c,))


def neg(a: Var) -> Var:
    return scale(a, -1.0)


def _sigmoid(x):
    # exp(-|x|) never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Var) -> Var:
    return a.tape.record("sigmoid", (a,), _sigmoid, lambda g, out, x: (g * out * (1.0 - out),))


def leaky_relu(a: Var, slope: float = 0.01) -> Var:
    slope = float(slope)

    def fwd(x):
        if 0.0 <= slope <= 1.0:
            return np.maximum(x, slope * x)
        return np.where(x > 0, x, slope * x)

    return a.tape.record(
        "leaky_relu", (a,), fwd,
        lambda g, out, x: (g * np.where(x > 0, 1.0, slope),),
    )


def square(a: Var) -> Var:
    return a.tape.record("square", (a,), np.square, lambda g, out, x: (2.0 * x * g,))


def sub_const(a: Var, c: np.ndarray) -> Var:
    """``a - c`` for a fixed array ``c`` of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeMismatchError(f"sub_const: shapes {a.shape} and {c.shape} differ")
    return a.tape.record("sub_const", (a,), lambda x: x - c, lambda g, out, x: (g,))


# -- linear algebra ---------------------------------------------------------

def matvec(W: Var, x: Var) -> Var:
    if W.value.ndim != 2 or x.value.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeMismatchError(f"matvec: cannot multiply {W.shape} by {x.shape}")
    return W.tape.record(
        "matvec", (W, x), lambda w, v: w @ v,
        lambda g, out, w, v: (np.outer(g, v), w.T @ g),
    )


def linear(x: Var, W: Var, b: Var) -> Var:
    """Affine map over the last axis: ``x @ W.T + b`` for any leading batch shape."""
    if W.value.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise ShapeMismatchError(
            f"linear: x {x.shape}, W {W.shape}, b {b.shape} are incompatible")

    def fwd(xv, wv, bv):
        lead = xv.shape[:-1]
        return (xv.reshape(-1, xv.shape[-1]) @ wv.T + bv).reshape(lead + (wv.shape[0],))

    def vjp(g, out, xv, wv, bv):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        return (g2 @ wv).reshape(xv.shape), g2.T @ x2, g2.sum(axis=0)

    return x.tape.record("linear", (x, W, b), fwd, vjp)


# -- reductions -------------------------------------------------------------

def sum(a: Var) -> Var:  # noqa: A001 - mirrors numpy naming
    return a.tape.record(
        "sum", (a,), lambda x: np.array(x.sum()),
        lambda g, out, x: (np.full_like(x, g),),
    )


def mean_sq_err(a: Var, b: Var) -> Var:
    _same_shape("mean_sq_err", a, b)

    def vjp(g, out, x, y):
        d = (2.0 / x.size) * g * (x - y)
        return d, -d

    return a.tape.record("mean_sq_err", (a, b), lambda x, y: np.array(np.mean((x - y) ** 2)), vjp)


def l1_sum(a: Var) -> Var:
    # np.sign gives 0 at 0, which is the subgradient convention we want
    return a.tape.record(
        "l1_sum", (a,), lambda x: np.array(np.abs(x).sum()),
        lambda g, out, x: (g * np.sign(x),),
    )


# -- shape manipulation -----------------------------------------------------

def reshape(a: Var, shape: Sequence[int]) -> Var:
    shape = tuple(shape)
    src = a.shape
    if int(np.prod(shape)) != a.value.size:
        raise ShapeMismatchError(f"reshape: cannot view {src} as {shape}")
    return a.tape.record(
        "reshape", (a,), lambda x: x.reshape(shape),
        lambda g, out, x: (g.reshape(x.shape),),
    )


def take(a: Var, index: int, axis: int = -1) -> Var:
    """Select one slice along ``axis`` (the axis is dropped)."""
    def vjp(g, out, x):
        full = np.zeros_like(x)
        idx = [slice(None)] * x.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        return (full,)

    return a.tape.record("take", (a,), lambda x: np.take(x, index, axis=axis), vjp)


def stack(parts: Sequence[Var], axis: int = -1) -> Var:
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"stack: parts have differing shapes {sorted(shapes)}")
    n = len(parts)

    def vjp(g, out, *xs):
        return tuple(np.take(g, k, axis=axis) for k in range(n))

    return parts[0].tape.record("stack", tuple(parts), lambda *xs: np.stack(xs, axis=axis), vjp)


def pair_concat(s: Var) -> Var:
    """(..., N, d) -> (..., N, N, 2d) with entry [i, j] = concat(s_i, s_j)."""
    if s.value.ndim < 2:
        raise ShapeMismatchError(f"pair_concat: need (..., N, d), got {s.shape}")

    def fwd(x):
        n, d = x.shape[-2:]
        lead = x.shape[:-2]
        xi = np.broadcast_to(x[..., :, None, :], lead + (n, n, d))
        xj = np.broadcast_to(x[..., None, :, :], lead + (n, n, d))
        return np.concatenate([xi, xj], axis=-1)

    def vjp(g, out, x):
        d = x.shape[-1]
        return (g[..., :d].sum(axis=-2) + g[..., d:].sum(axis=-3),)

    return s.tape.record("pair_concat", (s,), fwd, vjp)


def neighbor_sum(G: Var, A: Var) -> Var:
    """out[..., i] = sum_j A[i, j] * G[..., i, j]."""
    if A.value.ndim != 2 or G.shape[-2:] != A.shape:
        raise ShapeMismatchError(f"neighbor_sum: G {G.shape} does not end in A {A.shape}")

    def vjp(g, out, gv, av):
        dG = g[..., :, None] * av
        dA = (g[..., :, None] * gv).reshape((-1,) + av.shape).sum(axis=0)
        return dG, dA

    return G.tape.record(
        "neighbor_sum", (G, A), lambda gv, av: (gv * av).sum(axis=-1), vjp)
