"""On-disk layout of a training run.

::

    run_dir/
      config.json             snapshot written before training starts
      metrics.json            one row per step
      step_01/ ... step_T/
        mask.txt              "index<TAB>0|1"
        score.txt             "index<TAB>score"
        fill.txt              "index<TAB>value"
        task.jfnn             task network checkpoint
        scoring.jfnn          scoring network at the end of the step (if any)
        A_subset.csv          acquisition rows kept by the mask (if a scheme is known)
        history.json          validation history, per-epoch trace, losses
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .nn import load_checkpoint, save_checkpoint
from .trainer import StepArtifact


def step_dir(run_dir, t) -> Path:
    return Path(run_dir) / f"step_{t:02d}"


def write_vector(path, values, integer=False):
    with open(path, "w") as fh:
        for i, v in enumerate(np.asarray(values)):
            fh.write(f"{i}\t{int(v) if integer else repr(float(v))}\n")


def read_vector(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or int(parts[0]) != lineno - 1:
                raise FormatError(f"{path}:{lineno}: expected 'index<TAB>value'")
            values.append(float(parts[1]))
    return np.array(values, dtype=np.float64)


def save_step(run_dir, art: StepArtifact, scheme=None, scoring_net=None):
    d = step_dir(run_dir, art.t)
    d.mkdir(parents=True, exist_ok=True)
    write_vector(d / "mask.txt", art.mask, integer=True)
    write_vector(d / "score.txt", art.score)
    write_vector(d / "fill.txt", art.fill)
    save_checkpoint(art.task_net, d / "task.jfnn")
    if scoring_net is not None:
        save_checkpoint(scoring_net, d / "scoring.jfnn")
    if scheme is not None:
        scheme.subset(art.mask).to_csv(d / "A_subset.csv")
    meta = dict(
        t=art.t,
        C=art.C,
        val_history=[[int(e), float(v)] for e, v in art.val_history],
        val_loss=art.val_loss,
        train_loss=art.train_loss,
        test_metric=art.test_metric,
        epochs=art.epochs,
        wall_time=art.wall_time,
        drop=list(art.drop),
        trace=art.trace,
    )
    (d / "history.json").write_text(json.dumps(meta, indent=1))


def load_step(path) -> StepArtifact:
    d = Path(path)
    for name in ("mask.txt", "score.txt", "fill.txt", "task.jfnn", "history.json"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing artifact {d / name}")
    meta = json.loads((d / "history.json").read_text())
    mask = read_vector(d / "mask.txt")
    if not np.all((mask == 0) | (mask == 1)):
        raise FormatError(f"{d / 'mask.txt'}: mask is not binary")
    return StepArtifact(
        t=meta["t"],
        C=meta["C"],
        mask=mask,
        score=read_vector(d / "score.txt"),
        task_net=load_checkpoint(d / "task.jfnn"),
        fill=read_vector(d / "fill.txt"),
        val_history=[tuple(h) for h in meta["val_history"]],
        val_loss=meta["val_loss"],
        train_loss=meta["train_loss"],
        test_metric=meta.get("test_metric"),
        epochs=meta["epochs"],
        wall_time=meta["wall_time"],
        trace=meta["trace"],
        drop=meta["drop"],
    )


def load_run(run_dir) -> list[StepArtifact]:
    dirs = sorted(Path(run_dir).glob("step_*"))
    if not dirs:
        raise FileNotFoundError(f"no step artifacts under {run_dir}")
    return [load_step(d) for d in dirs]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def read_json(path):
    return json.loads(Path(path).read_text())


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
