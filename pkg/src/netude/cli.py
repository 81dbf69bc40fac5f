"""Command-line pipeline: simulate -> train / sweep -> evaluate / transfer.

Every command reads one YAML config (all keys optional; the defaults are the
reference protocol: 500 steps at dt 0.1, N_f 5, Adam at lr 0.02, 1000 + 1000
epochs, the seven-value alpha grid) and writes into a fixed layout::

    OUT/data/trajectory.csv (+ .json)   ground-truth states
    OUT/data/adjacency.csv              ground-truth graph
    OUT/checkpoints/model.json          `train`
    OUT/checkpoints/alpha_<a>.json      `sweep`, one per alpha
    OUT/metrics/metrics.csv             `train`
    OUT/metrics/loss_log.csv            `train`
    OUT/metrics/sweep.csv               `sweep`
    OUT/metrics/loss_alpha_<a>.csv      `sweep`
    OUT/metrics/selected.json           `sweep`, lowest dev MSE
    OUT/reports/eval.json, eval_*.csv   `evaluate`
    OUT/reports/transfer.json, transfer_*.csv   `transfer`
    OUT/manifest.json                   config, config hash, file digests

JSON artifacts carry the config hash themselves; CSV files are covered by the
digests in ``manifest.json``.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io
from .dynamics import (KuramotoParams, OscillatorParams, Trajectory, check_adjacency, fixture_adjacency,
                       kuramoto_rhs, random_adjacency, random_initial_condition, simulate,
                       simulate_oscillators)
from .errors import ConfigError, DivergenceError
from .evaluation import GroundTruthPhysics, TransferSpec, open_loop_rollout, transfer_eval
from .model import load_checkpoint, save_checkpoint, threshold_adjacency
from .training import (PAPER_ALPHAS, TrainConfig, alpha_sweep, make_windows, nf_step_mse, select_model,
                       split_thirds)

log = logging.getLogger("netude")

DEFAULTS = {
    "system": {
        "kind": "oscillator",
        "params": OscillatorParams().to_dict(),
        "kuramoto": {"omega": 1.0, "K": 1.0},
    },
    "adjacency": {"fixture": "net11"},
    "trajectory": {"steps": 500, "dt": 0.1, "seed": 0},
    "train": {
        "n_f": 5, "lr": 0.02, "epochs_phase1": 1000, "epochs_phase2": 1000, "alpha": 1e-5,
        "seed": 0, "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8, "batch_size": None,
        "epsilon": 0.01, "slope": 0.01, "nn1_widths": [2, 50, 50, 1], "nn2_widths": [4, 4, 1],
    },
    "sweep": {"alphas": list(PAPER_ALPHAS)},
    "transfer": {"adjacency": {"fixture": "cycle3"}, "n_steps": 500, "dt": 0.1, "seed": 1,
                 "transient_time": 20.0},
}


# -- config -------------------------------------------------------------------------

def read_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(where, f"parse error: {problem}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(path, "unknown key")
        if k == "adjacency":
            out[k] = copy.deepcopy(v)        # a source choice, replaced wholesale
        elif isinstance(base[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigError(path, "expected a mapping")
            out[k] = _merge(base[k], v, path + ".")
        elif k == "params":
            if not isinstance(v, dict):
                raise ConfigError(path, "expected a mapping")
            out[k] = {**base[k], **v}
        else:
            out[k] = v
    return out


def load_config(path=None, seed=None, alpha=None) -> dict:
    cfg = _merge(DEFAULTS, read_yaml(path) if path else {})
    if seed is not None:
        cfg["trajectory"]["seed"] = int(seed)
        cfg["train"]["seed"] = int(seed)
    if alpha is not None:
        cfg["train"]["alpha"] = float(alpha)
    validate(cfg)
    return cfg


def _check(cond, field, msg):
    if not cond:
        raise ConfigError(field, msg)


def _adjacency_source(src, field) -> None:
    _check(isinstance(src, dict) and len(src) == 1, field,
           "give exactly one of fixture / file / random / matrix")
    kind, val = next(iter(src.items()))
    if kind == "fixture":
        _check(val in ("cycle3", "net11"), f"{field}.fixture", f"unknown fixture {val!r}")
    elif kind == "random":
        _check(isinstance(val, dict), f"{field}.random", "expected {n, density, seed}")
        n, d = val.get("n"), val.get("density")
        _check(isinstance(n, int) and n >= 2, f"{field}.random.n", "must be an integer >= 2")
        _check(isinstance(d, (int, float)) and 0 < d < 1, f"{field}.random.density", "must lie in (0, 1)")
        _check(isinstance(val.get("seed", 0), int), f"{field}.random.seed", "must be an integer")
    elif kind == "file":
        _check(isinstance(val, str), f"{field}.file", "must be a path")
    elif kind == "matrix":
        _check(isinstance(val, list), f"{field}.matrix", "must be a list of rows")
    else:
        raise ConfigError(f"{field}.{kind}", "unknown adjacency source")


def validate(cfg: dict) -> None:
    _check(cfg["system"]["kind"] in ("oscillator", "kuramoto"), "system.kind",
           "must be 'oscillator' or 'kuramoto'")
    p = cfg["system"]["params"]
    _check(p.get("coupling_sign") in (1, -1), "system.params.coupling_sign", "must be +1 or -1")
    _adjacency_source(cfg["adjacency"], "adjacency")
    _adjacency_source(cfg["transfer"]["adjacency"], "transfer.adjacency")
    t = cfg["trajectory"]
    _check(isinstance(t["steps"], int) and t["steps"] >= 1, "trajectory.steps", "must be an integer >= 1")
    _check(isinstance(t["dt"], (int, float)) and t["dt"] > 0, "trajectory.dt", "must be positive")
    tr = cfg["train"]
    _check(isinstance(tr["n_f"], int) and tr["n_f"] >= 1, "train.n_f", "must be an integer >= 1")
    _check(isinstance(tr["lr"], (int, float)) and tr["lr"] > 0, "train.lr", "must be positive")
    _check(isinstance(tr["alpha"], (int, float)) and tr["alpha"] >= 0, "train.alpha", "must be >= 0")
    for k in ("epochs_phase1", "epochs_phase2"):
        _check(isinstance(tr[k], int) and tr[k] >= 0, f"train.{k}", "must be an integer >= 0")
    _check(tr["batch_size"] is None or (isinstance(tr["batch_size"], int) and tr["batch_size"] >= 1),
           "train.batch_size", "must be null or a positive integer")
    alphas = cfg["sweep"]["alphas"]
    _check(isinstance(alphas, list) and alphas and all(isinstance(a, (int, float)) and a >= 0 for a in alphas),
           "sweep.alphas", "must be a non-empty list of non-negative numbers")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def train_config(cfg: dict, alpha=None) -> TrainConfig:
    tr = dict(cfg["train"])
    if alpha is not None:
        tr["alpha"] = alpha
    return TrainConfig(**tr)


def resolve_adjacency(src: dict, base_dir: Path | None = None) -> np.ndarray:
    kind, val = next(iter(src.items()))
    if kind == "fixture":
        return fixture_adjacency(val)
    if kind == "random":
        return random_adjacency(val["n"], val["density"], val.get("seed", 0))
    if kind == "matrix":
        return check_adjacency(np.array(val, dtype=float), binary=True)
    path = Path(val)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return check_adjacency(io.load_matrix(path), binary=True)


# -- artifact bookkeeping -----------------------------------------------------------------------

class Layout:
    def __init__(self, out: Path, cfg: dict):
        self.out = Path(out)
        self.cfg = cfg
        self.hash = config_hash(cfg)
        for sub in ("data", "checkpoints", "metrics", "reports"):
            (self.out / sub).mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, rel: str) -> Path:
        p = self.out / rel
        self.written.append(p)
        return p

    def write_manifest(self) -> None:
        mpath = self.out / "manifest.json"
        files = {}
        if mpath.exists():
            old = json.loads(mpath.read_text())
            if old.get("config_hash") == self.hash:
                files = old.get("files", {})
        for p in self.written:
            if p.exists():
                files[p.relative_to(self.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {"config_hash": self.hash, "config": self.cfg, "files": dict(sorted(files.items()))}
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _alpha_tag(a: float) -> str:
    return f"{a:g}"


def _load_data(data_dir: Path) -> tuple[Trajectory, np.ndarray | None]:
    tpath = data_dir / "data" / "trajectory.csv"
    if not tpath.exists():
        raise ConfigError("--data", f"no trajectory at {tpath}; run `netude simulate` first")
    traj = io.load_trajectory(tpath)
    apath = data_dir / "data" / "adjacency.csv"
    A = io.load_matrix(apath) if apath.exists() else None
    return traj, A


def _save_model(layout: Layout, model, rel: str) -> None:
    model.provenance["config_hash"] = layout.hash
    save_checkpoint(model, layout.path(rel))


# -- commands -------------------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    layout = Layout(out, cfg)
    A = resolve_adjacency(cfg["adjacency"])
    t = cfg["trajectory"]
    if cfg["system"]["kind"] == "oscillator":
        traj = simulate_oscillators(A, t["steps"], t["dt"], t["seed"], OscillatorParams(**cfg["system"]["params"]))
    else:
        k = cfg["system"]["kuramoto"]
        kp = KuramotoParams(np.broadcast_to(np.asarray(k["omega"], dtype=float), (A.shape[0],)).copy(), k["K"])
        theta0 = np.random.default_rng(t["seed"]).uniform(0, 2 * np.pi, A.shape[0])
        traj = simulate(lambda th: kuramoto_rhs(th, A, kp), theta0, t["steps"], t["dt"],
                        {"system": "kuramoto", "params": kp.to_dict(), "seed": t["seed"]})
    traj.meta["config_hash"] = layout.hash
    io.save_trajectory(traj, layout.path("data/trajectory.csv"))
    layout.path("data/trajectory.json")
    io.save_matrix(A, layout.path("data/adjacency.csv"))
    layout.write_manifest()
    log.info("wrote %s trajectory of shape %s", cfg["system"]["kind"], traj.states.shape)
    return 0


def _require_oscillator(traj: Trajectory) -> None:
    if traj.node_dim != 2:
        raise ConfigError("system.kind", "the UDE model needs second-order (x, v) node states")


def cmd_train(cfg: dict, out: Path, data_dir: Path) -> int:
    traj, A = _load_data(data_dir)
    _require_oscillator(traj)
    layout = Layout(out, cfg)
    tc = train_config(cfg)
    [res] = alpha_sweep(split_thirds(traj, tc.n_f), tc, [tc.alpha], A)
    _save_model(layout, res.model, "checkpoints/model.json")
    io.save_loss_log(res.loss_log, layout.path("metrics/loss_log.csv"))
    io.save_metrics([res.metrics], layout.path("metrics/metrics.csv"))
    layout.write_manifest()
    if res.metrics.error:
        # the only recorded failure is a divergence
        print(f"netude: diverged: {res.metrics.error}", file=sys.stderr)
        return 3
    return 0


def cmd_sweep(cfg: dict, out: Path, data_dir: Path, parallel: int = 1) -> int:
    traj, A = _load_data(data_dir)
    _require_oscillator(traj)
    layout = Layout(out, cfg)
    tc = train_config(cfg)
    alphas = [float(a) for a in cfg["sweep"]["alphas"]]
    results = alpha_sweep(split_thirds(traj, tc.n_f), tc, alphas, A, parallel=parallel)
    for res in results:
        tag = _alpha_tag(res.metrics.alpha)
        _save_model(layout, res.model, f"checkpoints/alpha_{tag}.json")
        io.save_loss_log(res.loss_log, layout.path(f"metrics/loss_alpha_{tag}.csv"))
    metrics = [r.metrics for r in results]
    io.save_metrics(metrics, layout.path("metrics/sweep.csv"))
    failed = [m.alpha for m in metrics if m.error]
    try:
        best = select_model(metrics)
        sel = {"index": best, "alpha": metrics[best].alpha,
               "checkpoint": f"checkpoints/alpha_{_alpha_tag(metrics[best].alpha)}.json",
               "mse_dev": metrics[best].mse_dev, "config_hash": layout.hash}
    except ValueError as exc:
        sel = {"index": None, "error": str(exc), "config_hash": layout.hash}
    layout.path("metrics/selected.json").write_text(json.dumps(sel, indent=1, sort_keys=True) + "\n")
    layout.write_manifest()
    if failed:
        log.error("runs failed for alpha in %s", failed)
        return 1
    return 0


def cmd_evaluate(cfg: dict, out: Path, data_dir: Path, checkpoint: Path) -> int:
    traj, A = _load_data(data_dir)
    _require_oscillator(traj)
    model = load_checkpoint(checkpoint)
    layout = Layout(out, cfg)
    tc = train_config(cfg)
    splits = split_thirds(traj, tc.n_f)
    report = {"config_hash": layout.hash, "checkpoint": str(checkpoint), "split_mse": {}}
    for name in ("train", "dev", "test"):
        report["split_mse"][name] = nf_step_mse(model, make_windows(getattr(splits, name), tc.n_f, name))
    A_hat = threshold_adjacency(model.soft_adjacency())
    learned = open_loop_rollout(model, traj.states[0], traj.n_steps - 1, traj.dt, A_hat)
    report["rollout_mse"] = float(np.mean((learned.states - traj.states) ** 2))
    report["thresholded_adjacency"] = A_hat.tolist()
    if A is not None:
        report["adj_exact_match"] = bool(np.array_equal(A_hat, A))
    layout.path("reports/eval.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    io.export_phase_portrait(learned, layout.path("reports/eval_learned.csv"))
    io.export_phase_portrait(traj, layout.path("reports/eval_true.csv"))
    layout.write_manifest()
    return 0


def load_transfer_spec(path, n_expected: int | None = None) -> TransferSpec:
    raw = read_yaml(path) if path else {}
    base = copy.deepcopy(DEFAULTS["transfer"])
    for k in raw:
        if k not in base and k != "x0":
            raise ConfigError(f"{path}: {k}", "unknown key")
    base.update(raw)
    src = base["adjacency"]
    if isinstance(src, list):
        src = {"matrix": src}
    _adjacency_source(src, "adjacency")
    A = resolve_adjacency(src, Path(path).parent if path else None)
    n = A.shape[0]
    x0 = base.get("x0")
    if x0 is None:
        x0 = random_initial_condition(n, int(base["seed"]))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n, 2):
        raise ConfigError("x0", f"must have shape ({n}, 2) to match the adjacency, got {x0.shape}")
    return TransferSpec(A, x0, int(base["n_steps"]), float(base["dt"]), float(base["transient_time"]))


def cmd_transfer(cfg: dict, out: Path, checkpoint: Path | None, spec_path: Path | None,
                 oracle: bool = False) -> int:
    spec = load_transfer_spec(spec_path)
    layout = Layout(out, cfg)
    truth_params = OscillatorParams(**cfg["system"]["params"])
    if oracle:
        model = GroundTruthPhysics(truth_params)
    else:
        if checkpoint is None:
            raise ConfigError("--checkpoint", "required unless --oracle is given")
        model = load_checkpoint(checkpoint)
        if model.node_dim != 2:
            raise ConfigError("--checkpoint", f"model node_dim {model.node_dim} is not 2")
    report, learned, true = transfer_eval(model, spec, truth_params)
    d = report.to_dict()
    d["config_hash"] = layout.hash
    d["spec"] = spec.to_dict()
    layout.path("reports/transfer.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
    io.export_phase_portrait(learned, layout.path("reports/transfer_learned.csv"))
    io.export_phase_portrait(true, layout.path("reports/transfer_true.csv"))
    layout.write_manifest()
    return 0


# -- entry point ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config (defaults: reference protocol)")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="artifact directory")
    common.add_argument("--seed", type=int, help="override trajectory and training seeds")
    common.add_argument("--alpha", type=float, help="override train.alpha")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="netude", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate ground-truth data")
    for name in ("train", "sweep", "evaluate"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--data", type=Path, help="directory holding data/ (default: --out)")
        if name == "sweep":
            sp.add_argument("--parallel", type=int, default=1, help="concurrent phase-2 runs")
        if name == "evaluate":
            sp.add_argument("--checkpoint", type=Path, required=True)
    tp = sub.add_parser("transfer", parents=[common], help="deploy learned physics on a new graph")
    tp.add_argument("--checkpoint", type=Path)
    tp.add_argument("--spec", type=Path, help="YAML/JSON transfer spec (adjacency, x0 or seed, n_steps, dt)")
    tp.add_argument("--oracle", action="store_true", help="use the true physics instead of a checkpoint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.alpha)
        data_dir = getattr(args, "data", None) or args.out
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, data_dir)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, data_dir, args.parallel)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, data_dir, args.checkpoint)
        return cmd_transfer(cfg, args.out, args.checkpoint, args.spec, args.oracle)
    except ConfigError as exc:
        print(f"netude: config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"netude: diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"netude: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
