"""Windowed data, the sparsity-regularized loss, Adam and the alpha sweep.

Training runs in two phases: first the forecasting loss alone, then the same
loss plus ``alpha * sum(A)`` on the soft adjacency. The Adam state carries
over between the phases. A sweep shares one phase-1 run across every alpha,
which gives the same result as running each alpha from scratch because the
phase-1 run is deterministic.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .dynamics import Trajectory, check_adjacency
from .errors import DivergenceError
from .model import MlpSpec, NODE_NET, COUPLING_NET, UdeModel, init_model, rollout, threshold_adjacency

log = logging.getLogger(__name__)

PAPER_ALPHAS = (0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-2, 1e-1)


@dataclass
class WindowedDataset:
    """Moving windows of ``n_f + 1`` consecutive states (start + ``n_f`` targets)."""

    windows: np.ndarray          # (W, n_f + 1, N, d)
    starts: np.ndarray           # window start index within the source segment
    dt: float
    n_f: int
    split: str = "train"

    def __len__(self) -> int:
        return self.windows.shape[0]

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.windows[idx], self.starts[idx], self.dt, self.n_f, self.split)


@dataclass
class TrainConfig:
    n_f: int = 5
    lr: float = 0.02
    epochs_phase1: int = 1000
    epochs_phase2: int = 1000
    alpha: float = 1e-5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: Optional[int] = None     # None: full batch
    epsilon: float = 0.01
    slope: float = 0.01
    nn1_widths: tuple[int, ...] = NODE_NET.widths
    nn2_widths: tuple[int, ...] = COUPLING_NET.widths

    def __post_init__(self):
        if self.n_f < 1:
            raise ValueError("n_f must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.nn1_widths = tuple(self.nn1_widths)
        self.nn2_widths = tuple(self.nn2_widths)

    def new_model(self, n: int) -> UdeModel:
        return init_model(n, MlpSpec(self.nn1_widths, self.slope), MlpSpec(self.nn2_widths, self.slope),
                          self.epsilon, self.seed)


@dataclass
class RunMetrics:
    alpha: float
    a_l1: float
    mse_train: float
    mse_dev: float
    mse_test: float
    adj_l2_err: Optional[float] = None
    adj_exact_match: Optional[bool] = None
    error: Optional[str] = None

    def row(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()},
                         self.t, self.beta1, self.beta2, self.eps)


@dataclass
class Splits:
    train: Trajectory
    dev: Trajectory
    test: Trajectory


@dataclass
class TrainResult:
    model: UdeModel
    metrics: RunMetrics
    loss_log: list[dict] = field(default_factory=list)
    adam: Optional[AdamState] = None


# -- data ---------------------------------------------------------------------

def split_thirds(traj: Trajectory, n_f: int = 5) -> Splits:
    T = traj.n_steps
    if T < 3 * (n_f + 1):
        raise ValueError(f"trajectory of length {T} is too short for three splits with n_f={n_f}")
    b1, b2 = T // 3, (2 * T) // 3
    parts = [traj.states[:b1], traj.states[b1:b2], traj.states[b2:]]
    return Splits(*(Trajectory(traj.dt, p.copy(), dict(traj.meta)) for p in parts))


def make_windows(segment: Trajectory, n_f: int, split: str = "train", stride: int = 1) -> WindowedDataset:
    T = segment.n_steps
    if T < n_f + 1:
        raise ValueError(f"segment of length {T} cannot hold a window of {n_f + 1} samples")
    starts = np.arange(0, T - n_f, stride)
    windows = np.stack([segment.states[s:s + n_f + 1] for s in starts])
    return WindowedDataset(windows, starts, segment.dt, n_f, split)


# -- loss -----------------------------------------------------------------------

def loss(tm, batch: WindowedDataset, alpha: float):
    """Return ``(total, mse, penalty)`` handles for a batch of windows.

    ``penalty`` is the plain l1 norm of the soft adjacency; ``total`` adds
    ``alpha * penalty`` to the forecasting MSE.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    tape = tm.tape
    x0 = tape.const(batch.windows[:, 0])
    try:
        preds = rollout(tm, x0, batch.n_f, batch.dt)
    except DivergenceError as exc:
        bad = ~np.all(np.isfinite(_last_finite_check(tm, batch)), axis=(1, 2, 3))
        first = int(batch.starts[np.argmax(bad)]) if bad.any() else int(batch.starts[0])
        raise DivergenceError(f"rollout diverged for window starting at {first}: {exc}",
                              step=exc.step, where=f"window {first}") from exc
    pred = ad.stack(preds, axis=1)
    target = tape.const(batch.windows[:, 1:])
    mse = ad.mean_sq_err(pred, target)
    penalty = ad.l1_sum(tm.adjacency())
    total = ad.add(mse, ad.scale(penalty, alpha))
    return total, mse, penalty


def _last_finite_check(tm, batch):
    # plain forward pass to locate the offending window
    s = batch.windows[:, 0]
    out = np.empty((len(batch), batch.n_f) + s.shape[1:])
    with np.errstate(all="ignore"):
        for k in range(batch.n_f):
            s = _rk4_numpy(tm.model, s, batch.dt, tm.fixed_adjacency)
            out[:, k] = s
    return out


def _rk4_numpy(model: UdeModel, s, dt, adjacency=None):
    k1 = model.rhs(s, adjacency)
    k2 = model.rhs(s + 0.5 * dt * k1, adjacency)
    k3 = model.rhs(s + 0.5 * dt * k2, adjacency)
    k4 = model.rhs(s + dt * k3, adjacency)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def loss_and_grad(model: UdeModel, batch: WindowedDataset, alpha: float):
    tape = ad.Tape()
    tm = model.on_tape(tape)
    total, mse, penalty = loss(tm, batch, alpha)
    grads = tape.backward(total)
    by_name = {name: grads[leaf] for name, leaf in tm.leaves.items()}
    return float(total.value), float(mse.value), float(penalty.value), by_name


def nf_step_mse(model: UdeModel, data: WindowedDataset, adjacency=None) -> float:
    """Forecasting MSE over every window, computed without a tape."""
    s = data.windows[:, 0]
    err = 0.0
    for k in range(1, data.n_f + 1):
        s = _rk4_numpy(model, s, data.dt, adjacency)
        err += float(np.sum((s - data.windows[:, k]) ** 2))
    return err / data.windows[:, 1:].size


# -- optimizer --------------------------------------------------------------------

def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; mutates ``state`` and returns new params."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        out[k] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


# -- training schedule --------------------------------------------------------------

def run_phase(model: UdeModel, adam: AdamState, data: WindowedDataset, config: TrainConfig,
              alpha: float, epochs: int, phase: int, loss_log: list,
              rng: Optional[np.random.Generator] = None, callback: Optional[Callable] = None) -> None:
    """Optimize ``model`` in place for ``epochs`` epochs at penalty weight ``alpha``."""
    nw = len(data)
    bs = nw if config.batch_size is None else min(config.batch_size, nw)
    for epoch in range(epochs):
        order = np.arange(nw) if bs == nw else rng.permutation(nw)
        ep_loss = ep_pen = 0.0
        nb = 0
        for b0 in range(0, nw, bs):
            batch = data if bs == nw else data.subset(np.sort(order[b0:b0 + bs]))
            try:
                total, _mse, pen, grads = loss_and_grad(model, batch, alpha)
            except DivergenceError as exc:
                raise DivergenceError(f"phase {phase}, epoch {epoch}: {exc}", step=epoch,
                                      where=f"phase {phase}") from exc
            if not math.isfinite(total):
                raise DivergenceError(f"phase {phase}, epoch {epoch}: loss is {total}",
                                      step=epoch, where=f"phase {phase}")
            model.params = adam_step(adam, model.params, grads, config.lr)
            ep_loss += total
            ep_pen = pen
            nb += 1
        row = {"epoch": epoch, "phase": phase, "loss": ep_loss / nb, "penalty": ep_pen}
        loss_log.append(row)
        if callback is not None:
            callback(row)
        if epoch % 100 == 0:
            log.debug("phase %d epoch %d loss %.6g penalty %.6g", phase, epoch, row["loss"], ep_pen)


def evaluate_metrics(model: UdeModel, alpha: float, windows: dict[str, WindowedDataset],
                     A_true=None) -> RunMetrics:
    A_soft = model.soft_adjacency()
    m = RunMetrics(
        alpha=float(alpha),
        a_l1=float(np.abs(A_soft).sum()),
        mse_train=nf_step_mse(model, windows["train"]),
        mse_dev=nf_step_mse(model, windows["dev"]),
        mse_test=nf_step_mse(model, windows["test"]),
    )
    if A_true is not None:
        A_true = check_adjacency(A_true, model.n)
        m.adj_l2_err = adjacency_l2_error(A_soft, A_true)
        m.adj_exact_match = bool(np.array_equal(threshold_adjacency(A_soft), A_true))
    return m


def _windows_for(splits: Splits, n_f: int) -> dict[str, WindowedDataset]:
    return {name: make_windows(getattr(splits, name), n_f, name) for name in ("train", "dev", "test")}


def _provenance(config: TrainConfig, alpha: float) -> dict:
    d = asdict(config)
    d["alpha"] = alpha
    d["nn1_widths"] = list(config.nn1_widths)
    d["nn2_widths"] = list(config.nn2_widths)
    return {"train_config": d, "epochs": config.epochs_phase1 + config.epochs_phase2}


def train_two_phase(splits: Splits, config: TrainConfig, A_true=None,
                    callback: Optional[Callable] = None) -> TrainResult:
    """Phase 1 at alpha = 0, phase 2 at ``config.alpha``; deterministic per seed."""
    return alpha_sweep(splits, config, [config.alpha], A_true, callback)[0]


@dataclass
class Phase1:
    """Everything phase 2 needs to resume after the shared alpha = 0 phase."""

    model: UdeModel
    adam: AdamState
    rng_state: dict
    loss_log: list[dict]
    error: Optional[str] = None


def run_phase1(windows: dict[str, WindowedDataset], n: int, config: TrainConfig,
               callback: Optional[Callable] = None) -> Phase1:
    model = config.new_model(n)
    adam = AdamState.zeros_like(model.params, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    loss_log: list[dict] = []
    error = None
    try:
        run_phase(model, adam, windows["train"], config, 0.0, config.epochs_phase1, 1,
                  loss_log, rng, callback)
    except DivergenceError as exc:
        error = str(exc)
    return Phase1(model, adam, rng.bit_generator.state, loss_log, error)


def finish_run(p1: Phase1, windows: dict[str, WindowedDataset], config: TrainConfig, alpha: float,
               A_true=None, callback: Optional[Callable] = None) -> TrainResult:
    """Phase 2 at ``alpha`` starting from a copy of the phase-1 state."""
    alpha = float(alpha)
    m = p1.model.copy()
    m.provenance = _provenance(config, alpha)
    run_log = list(p1.loss_log)
    if p1.error is not None:
        return TrainResult(m, _failed(alpha, p1.error), run_log)
    adam = p1.adam.copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = p1.rng_state
    try:
        run_phase(m, adam, windows["train"], config, alpha, config.epochs_phase2, 2, run_log, rng, callback)
        metrics = evaluate_metrics(m, alpha, windows, A_true)
    except DivergenceError as exc:
        log.warning("run alpha=%g failed: %s", alpha, exc)
        return TrainResult(m, _failed(alpha, str(exc)), run_log, adam)
    return TrainResult(m, metrics, run_log, adam)


def alpha_sweep(splits: Splits, config: TrainConfig, alphas: Sequence[float], A_true=None,
                callback: Optional[Callable] = None, parallel: int = 1) -> list[TrainResult]:
    """One two-phase run per alpha; a failing run is recorded and the sweep goes on.

    With ``parallel > 1`` the phase-2 runs go to a process pool. Each run owns
    its model and optimizer state, so the results do not depend on it.
    """
    if len(alphas) == 0:
        raise ValueError("alphas must be non-empty")
    windows = _windows_for(splits, config.n_f)
    p1 = run_phase1(windows, splits.train.n_nodes, config, callback)
    if parallel <= 1 or len(alphas) == 1:
        return [finish_run(p1, windows, config, a, A_true, callback) for a in alphas]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(finish_run, p1, windows, config, a, A_true) for a in alphas]
        return [f.result() for f in futures]


def _failed(alpha: float, message: str) -> RunMetrics:
    nan = float("nan")
    return RunMetrics(alpha, nan, nan, nan, nan, None, None, message)


# -- model selection and metrics ------------------------------------------------------

def select_model(metrics: Sequence[RunMetrics]) -> int:
    """Index of the lowest dev MSE; ties go to the smaller alpha, then the earlier row."""
    if len(metrics) == 0:
        raise ValueError("no candidate models")
    best = None
    for i, m in enumerate(metrics):
        if m.mse_dev is None or not math.isfinite(m.mse_dev):
            continue
        key = (m.mse_dev, m.alpha, i)
        if best is None or key < best[0]:
            best = (key, i)
    if best is None:
        raise ValueError("every candidate run failed")
    return best[1]


def adjacency_l2_error(A_soft, A_true) -> float:
    A_soft = np.asarray(A_soft, dtype=np.float64)
    A_true = np.asarray(A_true, dtype=np.float64)
    if A_soft.shape != A_true.shape:
        raise ValueError(f"adjacency shapes differ: {A_soft.shape} vs {A_true.shape}")
    return float(np.sqrt(np.sum((A_soft - A_true) ** 2)))
