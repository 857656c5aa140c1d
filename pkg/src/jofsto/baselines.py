"""Random channel selection followed by ordinary task-network training."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .masking import MaskState
from .nn import mse_loss
from .scoring import ScoreState
from .trainer import NetConfig, Networks, Schedule, StepArtifact, _Loop, early_stop, predict


@dataclass
class BaselineResult:
    selected: np.ndarray
    artifact: StepArtifact
    test_mse: float | None
    seed: int

    @property
    def task_checkpoint(self):
        return self.artifact.task_net


def random_select(n_channels: int, C: int, seed) -> np.ndarray:
    """``C`` distinct channel indices drawn uniformly, returned sorted."""
    if not 1 <= C <= n_channels:
        raise ConfigError(f"cannot select {C} of {n_channels} channels")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_channels, size=C, replace=False))


def train_baseline(dataset, selected, schedule: Schedule, net_config: NetConfig | None = None,
                   seed=None) -> BaselineResult:
    """Train a task network on the selected channels; the rest are replaced by the fill.

    Scores are fixed at 1, so inputs match what the joint model sees apart from
    which channels are kept. Training runs until early stopping and the best
    validation epoch is kept.
    """
    start = time.perf_counter()
    seed = schedule.seed if seed is None else seed
    selected = np.unique(np.asarray(selected, dtype=np.intp))
    C_bar = dataset.n_channels
    if selected.size == 0 or selected[0] < 0 or selected[-1] >= C_bar:
        raise ConfigError(f"invalid selection {selected.tolist()}")
    nets = Networks.build(C_bar, dataset.n_targets, net_config, schedule.learning_rate, seed,
                          use_scoring_net=False)
    sched = Schedule([C_bar], schedule.E1, schedule.E2, schedule.E3, schedule.patience,
                     schedule.batch_size, schedule.learning_rate, seed, schedule.max_epochs)
    loop = _Loop(dataset, sched, nets)
    mask = np.zeros(C_bar)
    mask[selected] = 1
    ones = np.ones(C_bar)
    score_state = ScoreState(ones, alpha_s=0.0)
    mask_state = MaskState(mask.copy(), mask.copy(), mask.copy(), loop.fill, alpha_m=0.0)
    history, trace = [], []
    best, best_snap = np.inf, None
    for e in range(1, sched.max_epochs + 1):
        loop.epoch = e
        train_loss = loop.run_epoch(score_state, mask_state)
        val = loop.evaluate(loop.X_val, loop.Y_val, score_state, mask_state)
        history.append((e, val))
        trace.append(dict(epoch=e, phase="task", alpha_s=0.0, alpha_m=0.0,
                          train_loss=train_loss, val_loss=val))
        if val < best:
            best, best_snap = val, nets.snapshot()
        if early_stop(history, sched.patience):
            break
    nets.restore(best_snap)
    train_loss = mse_loss(predict(nets.task, loop.X_train, ones, mask, loop.fill), loop.Y_train)[0]
    art = StepArtifact(
        t=1, C=int(selected.size), mask=mask, score=ones, task_net=nets.task.copy(),
        fill=np.asarray(loop.fill).copy(), val_history=history, val_loss=best,
        train_loss=train_loss, epochs=len(history),
        wall_time=time.perf_counter() - start, trace=trace,
    )
    test_mse = None
    if dataset.test.size:
        X, Y = dataset.part("test")
        test_mse = mse_loss(predict(nets.task, X, ones, mask, loop.fill), Y)[0]
        art.test_metric = test_mse
    return BaselineResult(selected, art, test_mse, seed)
