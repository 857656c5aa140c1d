"""Command line entry point: simulate, train, evaluate, report, grid.

Configuration comes from an optional JSON file; command-line flags override
it, and anything left unset falls back to :class:`ExperimentConfig` defaults.

Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data, runs
from .baselines import random_select, train_baseline
from .estimator import halving_schedule
from .exceptions import ConfigError, FormatError, TrainingAbort
from .metrics import REPORT_SCALE, RunSummary, aggregate, format_table, mse_metric
from .trainer import NetConfig, Schedule, infer, train

log = logging.getLogger("jofsto")

METHODS = ("jofsto", "random_fs")
ABLATIONS = ("no_rfe", "no_scoring_net")
LAYER_CHOICES = (1, 2, 3)
UNIT_CHOICES = (30, 100, 300, 1000, 3000)


@dataclass
class ExperimentConfig:
    data_dir: str | None = None
    out: str = "runs/default"
    # simulation
    n: int = 24000
    channels: int = 64
    snr: float = 50.0
    split: list = field(default_factory=lambda: [20000, 2000, 2000])
    # schedule
    c_list: list | None = None
    e1: int = 25
    e2: int = 35
    e3: int = 45
    patience: int = 10
    batch_size: int = 1500
    lr: float = 1e-4
    max_epochs: int = 1000
    # networks; lists are only swept by ``grid``
    hidden_layers: int = 2
    hidden_units: int = 100
    grid_layers: list = field(default_factory=lambda: [2])
    grid_units: list = field(default_factory=lambda: [100])
    jobs: int = 1
    methods: list = field(default_factory=lambda: ["jofsto"])
    seeds: list = field(default_factory=lambda: [0])
    ablation: list = field(default_factory=list)

    def validate(self, n_channels=None) -> ExperimentConfig:
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for a in self.ablation:
            if a not in ABLATIONS:
                raise ConfigError(f"unknown ablation {a!r}; choose from {ABLATIONS}")
        for layers in [self.hidden_layers, *self.grid_layers]:
            if layers not in LAYER_CHOICES:
                raise ConfigError(f"hidden layer count must be one of {LAYER_CHOICES}")
        for units in [self.hidden_units, *self.grid_units]:
            if units < 1:
                raise ConfigError("hidden units must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.schedule(n_channels or self.channels, self.seeds[0]).validate(n_channels)
        return self

    def c_sizes(self, n_channels) -> list[int]:
        if self.c_list:
            sizes = [int(c) for c in self.c_list]
            return sizes if sizes[0] == n_channels else [n_channels] + sizes
        return halving_schedule(n_channels, max(1, n_channels // 16))

    def schedule(self, n_channels, seed) -> Schedule:
        sizes = self.c_sizes(n_channels)
        if "no_rfe" in self.ablation:
            sizes = [sizes[0], sizes[-1]]
        return Schedule(sizes, self.e1, self.e2, self.e3, self.patience, self.batch_size,
                        self.lr, int(seed), self.max_epochs)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        raw = runs.read_json(path)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


# -- dataset directories ------------------------------------------------------


def save_dataset(path, ds: data.Dataset):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data.save_matrix(path / "X.jfmx", ds.X_bar)
    data.save_matrix(path / "Y.jfmx", ds.Y)
    if ds.scheme is not None:
        ds.scheme.to_csv(path / "scheme.csv")
    runs.write_json(path / "split.json",
                    dict(train=ds.train.tolist(), val=ds.val.tolist(), test=ds.test.tolist()))


def load_dataset(path) -> data.Dataset:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"dataset directory {path} does not exist")
    X = data.load_any(path / "X.csv" if (path / "X.csv").exists() else path / "X.jfmx")
    Y = data.load_any(path / "Y.csv" if (path / "Y.csv").exists() else path / "Y.jfmx")
    scheme = data.AcquisitionScheme.from_csv(path / "scheme.csv") if (path / "scheme.csv").exists() else None
    splits = runs.read_json(path / "split.json") if (path / "split.json").exists() else None
    ds = data.Dataset(X, Y, scheme=scheme)
    if splits is None:
        return data.split(ds, (0.8, 0.1, 0.1), seed=0)
    return replace(ds, train=splits["train"], val=splits["val"], test=splits["test"])


# -- subcommands --------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, seed=None) -> Path:
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    scheme = data.AcquisitionScheme.default(cfg.channels)
    ds = data.simulate(scheme, cfg.n, snr=cfg.snr, seed=seed)
    ds = data.split(ds, tuple(cfg.split), seed=seed)
    out = Path(cfg.out)
    save_dataset(out, ds)
    log.info("simulated %d x %d into %s", ds.n, ds.n_channels, out)
    return out


def _run_dirs(cfg):
    combos = [(m, s) for m in cfg.methods for s in cfg.seeds]
    out = Path(cfg.out)
    if len(combos) == 1:
        return [(combos[0][0], combos[0][1], out)]
    return [(m, s, out / f"{m}_seed{s}") for m, s in combos]


def _metric_row(art, method, seed, ds):
    row = dict(step=art.t, C=art.C, method=method, seed=int(seed),
               train_mse=art.train_loss, val_mse=art.val_loss, epochs=art.epochs,
               wall_time=art.wall_time, selected=art.selected.tolist())
    if ds.test.size:
        X, Y = ds.part("test")
        row["test_mse"] = mse_metric(infer(art, X), Y)
    return row


def train_one(cfg: ExperimentConfig, method: str, seed: int, run_dir, ds=None) -> list[dict]:
    """Train a single (method, seed) combination into ``run_dir``; returns metric rows."""
    if ds is None:
        ds = data.normalize(load_dataset(cfg.data_dir))
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    schedule = cfg.schedule(ds.n_channels, seed).validate(ds.n_channels)
    snapshot = dict(asdict(cfg), method=method, seed=int(seed), schedule=asdict(schedule),
                    data_dir=str(Path(cfg.data_dir).resolve()) if cfg.data_dir else None)
    runs.write_json(run_dir / "config.json", snapshot)
    runs.write_vector(run_dir / "normalizers.txt", ds.normalizers)
    net_config = NetConfig(cfg.hidden_layers, cfg.hidden_units)
    rows = []
    if method == "jofsto":
        arts = train(ds, schedule, net_config,
                     use_scoring_net="no_scoring_net" not in cfg.ablation, run_dir=run_dir)
    else:
        arts = []
        for t, C in enumerate(schedule.C_list, start=1):
            res = train_baseline(ds, random_select(ds.n_channels, C, seed), schedule,
                                 net_config, seed=seed)
            res.artifact.t = t
            runs.save_step(run_dir, res.artifact, scheme=ds.scheme)
            arts.append(res.artifact)
    rows = [_metric_row(a, method, seed, ds) for a in arts]
    runs.write_json(run_dir / "metrics.json", rows)
    return rows


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    if not cfg.data_dir:
        raise ConfigError("train needs --data")
    ds = data.normalize(load_dataset(cfg.data_dir))
    cfg.validate(ds.n_channels)
    dirs = []
    for method, seed, run_dir in _run_dirs(cfg):
        start = time.perf_counter()
        train_one(cfg, method, seed, run_dir, ds)
        log.info("%s seed %s done in %.1fs -> %s", method, seed, time.perf_counter() - start, run_dir)
        dirs.append(run_dir)
    return dirs


def cmd_evaluate(run_dir, split="test") -> list[dict]:
    """Recompute per-step errors on ``split`` using only files in ``run_dir``."""
    run_dir = Path(run_dir)
    if not (run_dir / "config.json").exists():
        raise FileNotFoundError(f"{run_dir} has no config.json")
    snap = runs.read_json(run_dir / "config.json")
    ds = load_dataset(snap["data_dir"])
    normalizers = runs.read_vector(run_dir / "normalizers.txt")
    X, Y = ds.part(split)
    if len(X) == 0:
        raise ConfigError(f"split {split!r} is empty")
    X = X / normalizers.astype(X.dtype)
    rows = []
    for art in runs.load_run(run_dir):
        rows.append(dict(step=art.t, C=art.C, method=snap["method"], seed=snap["seed"],
                         split=split, mse=mse_metric(infer(art, X), Y),
                         selected=art.selected.tolist()))
    runs.write_json(run_dir / f"evaluation_{split}.json", rows)
    metrics_path = run_dir / "metrics.json"
    if metrics_path.exists():
        metrics = runs.read_json(metrics_path)
        by_step = {r["step"]: r["mse"] for r in rows}
        for m in metrics:
            m[f"{split}_mse"] = by_step.get(m["step"], m.get(f"{split}_mse"))
        runs.write_json(metrics_path, metrics)
    return rows


def _find_metrics(paths):
    found = []
    for p in map(Path, paths):
        if (p / "metrics.json").exists():
            found.append(p / "metrics.json")
        else:
            found += sorted(p.glob("*/metrics.json"))
    return found


def cmd_report(run_dirs, out=None) -> str:
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    summaries, per_dir_C = [], {}
    for path in _find_metrics(run_dirs):
        rows = runs.read_json(path)
        per_dir_C[str(path.parent)] = sorted({r["C"] for r in rows})
        for r in rows:
            if r.get("test_mse") is None:
                continue
            summaries.append(RunSummary(r["method"], r["C"], r["seed"], r["test_mse"],
                                        r.get("selected", ()), r.get("wall_time", 0.0)))
    if not summaries:
        raise ConfigError("no evaluated runs found")
    warnings = []
    if len({tuple(v) for v in per_dir_C.values()}) > 1:
        warnings.append("WARNING: run directories cover different subset sizes: "
                        + "; ".join(f"{k}: {v}" for k, v in per_dir_C.items()))
    run_rows = [dict(method=s.method, C=s.C, seed=s.seed, mse_x100=s.test_mse * REPORT_SCALE)
                for s in sorted(summaries, key=lambda s: (s.method, -s.C, s.seed))]
    agg = aggregate(summaries)
    text = "\n\n".join(
        warnings
        + [format_table(run_rows, ["method", "C", "seed", "mse_x100"]),
           format_table(agg, ["method", "C", "seeds", "mean_mse", "std_mse", "mean_jaccard"])
           + "\n(MSE x 100; std is the population standard deviation across seeds)"]
    )
    if out is not None:
        runs.write_json(out, dict(runs=[asdict(s) | {"selected": sorted(s.selected)}
                                        for s in summaries],
                                  aggregates=agg, warnings=warnings))
    return text


def _grid_job(args):
    cfg, method, seed, run_dir = args
    return train_one(cfg, method, seed, run_dir)


def cmd_grid(cfg: ExperimentConfig) -> dict:
    """Train every (layers, units) combination and pick the best per (method, C) on validation."""
    if not cfg.data_dir:
        raise ConfigError("grid needs --data")
    if not cfg.grid_layers or not cfg.grid_units:
        raise ConfigError("grid is empty")
    ds = data.normalize(load_dataset(cfg.data_dir))
    cfg.validate(ds.n_channels)
    jobs = []
    for layers, units in itertools.product(cfg.grid_layers, cfg.grid_units):
        sub = replace(cfg, hidden_layers=layers, hidden_units=units,
                      out=str(Path(cfg.out) / f"L{layers}_U{units}"))
        for method, seed, run_dir in _run_dirs(sub):
            jobs.append((sub, method, seed, run_dir))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [train_one(sub, m, s, d, ds) for sub, m, s, d in jobs]
    board = []
    for (sub, _, _, run_dir), rows in zip(jobs, results):
        for r in rows:
            board.append(dict(r, hidden_layers=sub.hidden_layers, hidden_units=sub.hidden_units,
                              run_dir=str(run_dir)))
    best = {}
    for r in board:
        key = f"{r['method']}/seed{r['seed']}/C{r['C']}"
        if key not in best or r["val_mse"] < best[key]["val_mse"]:
            best[key] = r
    result = dict(leaderboard=board, best=best)
    runs.write_json(Path(cfg.out) / "leaderboard.json", result)
    return result


# -- argument parsing ---------------------------------------------------------


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _strs(text):
    return [v for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jofsto", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out")
        p.add_argument("--seed", type=_ints, dest="seeds", help="seed or comma list")

    def training(p):
        p.add_argument("--data", dest="data_dir")
        p.add_argument("--c-list", type=_ints, dest="c_list")
        p.add_argument("--e1", type=int)
        p.add_argument("--e2", type=int)
        p.add_argument("--e3", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--max-epochs", type=int, dest="max_epochs")
        p.add_argument("--hidden-layers", type=int, dest="hidden_layers")
        p.add_argument("--hidden-units", type=int, dest="hidden_units")
        p.add_argument("--method", type=_strs, dest="methods", help="jofsto,random_fs")
        p.add_argument("--ablation", type=_strs, help="no_rfe,no_scoring_net")

    p = sub.add_parser("simulate", help="write a synthetic dataset directory")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--split", type=lambda s: [float(v) if "." in v else int(v) for v in s.split(",")])

    p = sub.add_parser("train", help="train one or more runs")
    common(p)
    training(p)

    p = sub.add_parser("grid", help="grid search over network sizes")
    common(p)
    training(p)
    p.add_argument("--layers", type=_ints, dest="grid_layers")
    p.add_argument("--units", type=_ints, dest="grid_units")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("evaluate", help="recompute per-step errors from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = sub.add_parser("report", help="tabulate one or more run directories")
    p.add_argument("run_dirs", nargs="*")
    p.add_argument("--out")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "simulate":
            print(cmd_simulate(config_from_args(args)))
        elif args.command == "train":
            for d in cmd_train(config_from_args(args)):
                print(d)
        elif args.command == "grid":
            result = cmd_grid(config_from_args(args))
            for key, row in sorted(result["best"].items()):
                print(f"{key}: L{row['hidden_layers']} U{row['hidden_units']} "
                      f"val_mse={row['val_mse']:.6g}")
        elif args.command == "evaluate":
            for row in cmd_evaluate(args.run_dir, args.split):
                print(f"step {row['step']} C={row['C']} {row['split']}_mse={row['mse']:.6g}")
        elif args.command == "report":
            if not args.run_dirs:
                parser.error("report needs at least one run directory")
            print(cmd_report(args.run_dirs, args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrainingAbort, FormatError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
