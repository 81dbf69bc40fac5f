"""Plain-text artifact formats.

* trajectory CSV: ``t,node,dim,value`` rows plus a ``.json`` sidecar holding
  ``dt``, ``N``, ``d`` and whatever metadata rides on the trajectory;
* phase-portrait CSV: ``t,node,x,v`` rows (oscillator states only);
* metrics CSV: one row per alpha;
* loss log CSV: ``epoch,phase,loss,penalty``.

Reals are written with 17 significant digits so float64 values round-trip
exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import Trajectory

FLOAT_FMT = "{:.17g}"

METRIC_COLUMNS = ("alpha", "a_l1", "mse_train", "mse_dev", "mse_test", "adj_l2_err", "adj_exact_match")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    T, N, d = traj.states.shape
    lines = ["t,node,dim,value"]
    t = traj.times
    for k in range(T):
        tk = fmt(t[k])
        for i in range(N):
            for j in range(d):
                lines.append(f"{tk},{i},{j},{fmt(traj.states[k, i, j])}")
    path.write_text("\n".join(lines) + "\n")
    meta = {"dt": traj.dt, "T": T, "N": N, "d": d, **traj.meta}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    T, N, d = int(meta.pop("T")), int(meta.pop("N")), int(meta.pop("d"))
    dt = float(meta.pop("dt"))
    states = np.empty((T, N, d))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "node", "dim", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            try:
                i, j, val = int(row[1]), int(row[2]), float(row[3])
                k = round(float(row[0]) / dt)
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            states[k, i, j] = val
            n_rows += 1
    if n_rows != T * N * d:
        raise ValueError(f"{path}: expected {T * N * d} rows, found {n_rows}")
    return Trajectory(dt, states, meta)


def export_phase_portrait(traj: Trajectory, path) -> None:
    if traj.node_dim != 2:
        raise ValueError(f"phase portraits need 2-d node states, got d={traj.node_dim}")
    lines = ["t,node,x,v"]
    t = traj.times
    for k in range(traj.n_steps):
        for i in range(traj.n_nodes):
            x, v = traj.states[k, i]
            lines.append(f"{fmt(t[k])},{i},{fmt(x)},{fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_phase_portrait(path, dt: float) -> Trajectory:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(rows[:, 1].max()) + 1
    return Trajectory(dt, rows[:, 2:4].reshape(-1, n, 2))


def save_matrix(A, path) -> None:
    A = np.asarray(A)
    Path(path).write_text("\n".join(",".join(fmt(x) for x in row) for row in A) + "\n")


def load_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_metrics(rows: Iterable, path) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for m in rows:
        d = m if isinstance(m, dict) else m.row()
        vals = []
        for c in METRIC_COLUMNS:
            v = d.get(c)
            if isinstance(v, float) and math.isnan(v):
                v = None
            vals.append(fmt(v))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_metrics(path) -> list[dict]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            d = {}
            for c in METRIC_COLUMNS:
                v = row[c]
                if c == "adj_exact_match":
                    d[c] = None if v == "" else v == "true"
                else:
                    d[c] = float("nan") if v == "" else float(v)
            out.append(d)
    return out


def save_loss_log(rows: Sequence[dict], path) -> None:
    lines = ["epoch,phase,loss,penalty"]
    for r in rows:
        lines.append(f"{r['epoch']},{r['phase']},{fmt(r['loss'])},{fmt(r['penalty'])}")
    Path(path).write_text("\n".join(lines) + "\n")
