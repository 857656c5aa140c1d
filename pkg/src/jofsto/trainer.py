"""Joint scoring/task training inside a recursive feature elimination loop.

Step 1 trains both networks on every channel with purely sample-dependent
scores. Each later step ``t`` runs four phases over epochs ``e``:

* ``e <= E1``: joint optimization with ``alpha_s = 1/2`` against the previous
  population score; at ``E1`` the new population score is the average of the
  previous one and the mean learnt score.
* ``E1 < e <= E2``: ``alpha_s`` falls by ``2 / (E2 - E1)`` per epoch to 0.
* ``E2 < e <= E3``: the ``C[t-1] - C[t]`` lowest-scored active channels are
  faded out of the mask by ``1 / (E3 - E2)`` per epoch.
* ``e > E3``: task network refinement on the binary mask until early stopping.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, TrainingAbort
from .masking import MaskState, anneal_mask, apply_mask, mask_target, select_drop_set
from .nn import AdamState, DenseNet, adam_step, backward, forward, mse_loss
from .scoring import ScoreState, anneal_alpha_s, blend, population_scores, update_global

log = logging.getLogger(__name__)

# fixed chunking for evaluation so that logged losses and later inference agree bit for bit
EVAL_CHUNK = 4096


@dataclass
class Schedule:
    C_list: list
    E1: int = 25
    E2: int = 35
    E3: int = 45
    patience: int = 10
    batch_size: int = 1500
    learning_rate: float = 1e-4
    seed: int = 0
    # safety cap on the open-ended (early-stopped) phases
    max_epochs: int = 1000

    def validate(self, n_channels: int | None = None):
        C = [int(c) for c in self.C_list]
        if not C:
            raise ConfigError("C_list is empty")
        if any(b >= a for a, b in zip(C, C[1:])):
            raise ConfigError(f"C_list must be strictly decreasing, got {C}")
        if C[-1] < 1:
            raise ConfigError("subset sizes must be positive")
        if n_channels is not None and C[0] != n_channels:
            raise ConfigError(f"C_list must start at the channel count {n_channels}, got {C[0]}")
        if not 1 <= self.E1 < self.E2 < self.E3:
            raise ConfigError(f"need 1 <= E1 < E2 < E3, got {self.E1}, {self.E2}, {self.E3}")
        if self.patience < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError("patience, batch_size and learning_rate must be positive")
        if self.max_epochs <= self.E3:
            raise ConfigError("max_epochs must exceed E3")
        return self


@dataclass
class NetConfig:
    hidden_layers: int = 2
    hidden_units: int = 100

    def dims(self, n_in, n_out) -> list[int]:
        return [n_in] + [self.hidden_units] * self.hidden_layers + [n_out]


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    sample_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("a batch needs at least one row")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets differ in row count")


@dataclass
class Networks:
    """Scoring and task networks with their optimizers; ``scoring`` may be absent."""

    task: DenseNet
    task_opt: AdamState
    scoring: DenseNet | None = None
    scoring_opt: AdamState | None = None

    @classmethod
    def build(cls, n_channels, n_targets, net_config=None, learning_rate=1e-4, seed=0,
              use_scoring_net=True):
        net_config = net_config or NetConfig()
        rng = np.random.default_rng(seed)
        task = DenseNet.initialize(net_config.dims(n_channels, n_targets), "identity", rng)
        scoring = scoring_opt = None
        if use_scoring_net:
            scoring = DenseNet.initialize(
                net_config.dims(n_channels, n_channels), "two_sigmoid", rng
            )
            scoring_opt = AdamState.for_net(scoring, learning_rate)
        return cls(task, AdamState.for_net(task, learning_rate), scoring, scoring_opt)

    def snapshot(self):
        return (self.task.copy(), None if self.scoring is None else self.scoring.copy())

    def restore(self, snap):
        self.task.load_state(snap[0])
        if self.scoring is not None:
            self.scoring.load_state(snap[1])


@dataclass
class StepArtifact:
    t: int
    C: int
    mask: np.ndarray
    score: np.ndarray
    task_net: DenseNet
    fill: np.ndarray
    val_history: list = field(default_factory=list)
    # loss of the deployed model, i.e. exactly what ``infer`` computes
    val_loss: float = float("nan")
    train_loss: float = float("nan")
    test_metric: float | None = None
    epochs: int = 0
    wall_time: float = 0.0
    trace: list = field(default_factory=list)
    drop: list = field(default_factory=list)

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.mask == 1)


# -- single training step -----------------------------------------------------


def _score_weighted(s, x, dtype):
    return np.asarray(s).astype(dtype, copy=False) * x


def composite_gradients(batch: Batch, nets: Networks, score_state: ScoreState,
                        mask_state: MaskState):
    """Loss, predictions and gradients of both networks for one batch (no update).

    The scoring gradient is ``None`` when ``alpha_s == 0`` or there is no
    scoring network; in that case the scoring network is not evaluated.
    """
    dtype = nets.task.dtype
    x_bar = np.asarray(batch.inputs, dtype=dtype)
    alpha = score_state.alpha_s
    s_cache = None
    if alpha > 0:
        if nets.scoring is not None:
            s_p, s_cache = forward(nets.scoring, x_bar)
        else:
            s_p = np.ones_like(x_bar)
        score_state.s_p = s_p
    else:
        score_state.s_p = None
    s = blend(score_state)
    x = apply_mask(x_bar, mask_state)
    y_hat, t_cache = forward(nets.task, _score_weighted(s, x, dtype))
    loss, grad = mse_loss(y_hat, batch.targets)
    if not np.isfinite(loss):
        raise TrainingAbort(f"non-finite loss {loss}")
    t_grads = backward(nets.task, t_cache, grad)
    s_grads = None
    if s_cache is not None:
        # dL/ds_p = alpha * dL/ds, and dL/ds = dL/d(s*x) * x
        ds_p = (alpha * t_grads.inputs * x).astype(dtype, copy=False)
        s_grads = backward(nets.scoring, s_cache, ds_p)
    return loss, y_hat, t_grads, s_grads


def fpbp(batch: Batch, nets: Networks, score_state: ScoreState, mask_state: MaskState):
    """One forward/backward pass through both networks and one Adam step for each.

    When ``alpha_s == 0`` the scoring network's parameters and optimizer state
    are left untouched.
    """
    loss, y_hat, t_grads, s_grads = composite_gradients(batch, nets, score_state, mask_state)
    if s_grads is not None:
        adam_step(nets.scoring, s_grads, nets.scoring_opt)
    adam_step(nets.task, t_grads, nets.task_opt)
    return loss, y_hat


def predict(task: DenseNet, inputs, score, mask, fill) -> np.ndarray:
    """Deployed prediction: fill inactive channels, weight by score, run the task net."""
    x = np.asarray(inputs)
    mask = np.asarray(mask)
    if x.ndim != 2 or x.shape[1] != mask.size:
        raise ValueError(f"expected {mask.size} input columns, got shape {x.shape}")
    x = np.where(mask == 1, x, fill).astype(task.dtype, copy=False)
    z = _score_weighted(np.asarray(score)[None, :], x, task.dtype)
    return _chunked_forward(task, z)


def _chunked_forward(net, z):
    if len(z) == 0:
        return np.zeros((0, net.n_outputs), dtype=net.dtype)
    return np.concatenate([forward(net, z[i : i + EVAL_CHUNK])[0] for i in range(0, len(z), EVAL_CHUNK)])


def infer(artifact: StepArtifact, new_inputs) -> np.ndarray:
    return predict(artifact.task_net, new_inputs, artifact.score, artifact.mask, artifact.fill)


def early_stop(val_history, patience: int) -> bool:
    """True once the best loss is ``patience`` or more epochs old."""
    if not len(val_history):
        raise ValueError("empty validation history")
    losses = [h[1] if isinstance(h, (tuple, list)) else h for h in val_history]
    best = int(np.argmin(losses))
    return len(losses) - 1 - best >= patience


# -- the training loop --------------------------------------------------------


class _Loop:
    """Mutable state shared by the steps of one run."""

    def __init__(self, dataset, schedule: Schedule, nets: Networks):
        if dataset.fill is None:
            raise ConfigError("dataset has no fill vector; normalize it first")
        if dataset.train.size == 0 or dataset.val.size == 0:
            raise ConfigError("training needs non-empty train and validation splits")
        self.schedule = schedule
        self.nets = nets
        dtype = nets.task.dtype
        self.X_train = dataset.X_bar[dataset.train].astype(dtype)
        self.Y_train = dataset.Y[dataset.train].astype(dtype)
        self.X_val = dataset.X_bar[dataset.val].astype(dtype)
        self.Y_val = dataset.Y[dataset.val].astype(dtype)
        self.train_idx = dataset.train
        self.fill = np.asarray(dataset.fill)
        self.n_channels = dataset.n_channels
        self.rng = np.random.default_rng(np.random.SeedSequence(schedule.seed).spawn(2)[1])
        self.t = 0
        self.epoch = 0

    def run_epoch(self, score_state, mask_state) -> float:
        order = self.rng.permutation(len(self.X_train))
        bs = self.schedule.batch_size
        total, count = 0.0, 0
        for k, start in enumerate(range(0, len(order), bs)):
            rows = order[start : start + bs]
            batch = Batch(self.X_train[rows], self.Y_train[rows], self.train_idx[rows])
            try:
                loss, _ = fpbp(batch, self.nets, score_state, mask_state)
            except TrainingAbort as exc:
                raise TrainingAbort(
                    f"{exc} (step {self.t}, epoch {self.epoch}, batch {k})"
                ) from None
            total += loss * len(rows)
            count += len(rows)
        return total / count

    def evaluate(self, X, Y, score_state, mask_state) -> float:
        """Loss under the current training-time state (fractional mask, blended score)."""
        if score_state.alpha_s == 0.0 and mask_state.is_binary:
            pred = predict(self.nets.task, X, score_state.s_bar, mask_state.m, mask_state.fill)
            return mse_loss(pred, Y)[0]
        preds = []
        for i in range(0, len(X), EVAL_CHUNK):
            xb = X[i : i + EVAL_CHUNK]
            if score_state.alpha_s > 0:
                score_state.s_p = (
                    forward(self.nets.scoring, xb)[0]
                    if self.nets.scoring is not None
                    else np.ones_like(xb)
                )
            s = blend(score_state)
            x = apply_mask(xb, mask_state)
            preds.append(forward(self.nets.task, _score_weighted(s, x, xb.dtype))[0])
        return mse_loss(np.concatenate(preds), Y)[0]

    def mean_scores(self) -> np.ndarray:
        if self.nets.scoring is None:
            return np.ones(self.n_channels)
        return population_scores(self.nets.scoring, self.X_train, self.schedule.batch_size)

    def scoring_params(self):
        if self.nets.scoring is None:
            return None
        return [p.copy() for p in self.nets.scoring.parameters()]


def _scoring_delta(before, nets):
    if before is None:
        return None
    return float(max(np.max(np.abs(a - b)) for a, b in zip(before, nets.scoring.parameters())))


def _finish(loop: _Loop, t, C, mask, score, history, trace, start, drop=()):
    val_loss = mse_loss(predict(loop.nets.task, loop.X_val, score, mask, loop.fill), loop.Y_val)[0]
    train_loss = mse_loss(
        predict(loop.nets.task, loop.X_train, score, mask, loop.fill), loop.Y_train
    )[0]
    return StepArtifact(
        t=t,
        C=C,
        mask=np.asarray(mask, dtype=np.float64).copy(),
        score=np.asarray(score, dtype=np.float64).copy(),
        task_net=loop.nets.task.copy(),
        fill=loop.fill.copy(),
        val_history=history,
        val_loss=val_loss,
        train_loss=train_loss,
        epochs=len(history),
        wall_time=time.perf_counter() - start,
        trace=trace,
        drop=[int(i) for i in drop],
    )


def _run_step_one(loop: _Loop) -> StepArtifact:
    start = time.perf_counter()
    sched = loop.schedule
    loop.t = 1
    score_state = ScoreState.initial(loop.n_channels)
    mask_state = MaskState.full(loop.fill)
    history, trace = [], []
    best, best_snap = np.inf, None
    for e in range(1, sched.max_epochs + 1):
        loop.epoch = e
        before = loop.scoring_params()
        train_loss = loop.run_epoch(score_state, mask_state)
        val = loop.evaluate(loop.X_val, loop.Y_val, score_state, mask_state)
        history.append((e, val))
        trace.append(
            dict(epoch=e, phase="full", alpha_s=1.0, alpha_m=0.0, train_loss=train_loss,
                 val_loss=val, active=float(mask_state.m.sum()),
                 scoring_delta=_scoring_delta(before, loop.nets))
        )
        if val < best:
            best, best_snap = val, loop.nets.snapshot()
        if early_stop(history, sched.patience):
            break
    loop.nets.restore(best_snap)
    s_bar_1 = loop.mean_scores()
    log.info("step 1: %d epochs, best val %.6g", len(history), best)
    return _finish(loop, 1, loop.n_channels, mask_state.m, s_bar_1, history, trace, start)


def _run_step_t(loop: _Loop, t: int, C_t: int, prev: StepArtifact) -> StepArtifact:
    start = time.perf_counter()
    sched = loop.schedule
    E1, E2, E3 = sched.E1, sched.E2, sched.E3
    loop.t = t
    m_prev = prev.mask.copy()
    k = int(m_prev.sum()) - C_t
    score_state = ScoreState(prev.score.copy(), alpha_s=0.5)
    mask_state = MaskState(m_prev.copy(), m_prev.copy(), m_prev.copy(), loop.fill, alpha_m=1.0)
    history, trace = [], []
    refine = []
    best, best_snap = np.inf, None
    drop = np.array([], dtype=np.intp)
    for e in range(1, sched.max_epochs + 1):
        loop.epoch = e
        if e == E1 + 1:
            s_bar_t = update_global(prev.score, loop.mean_scores())
            score_state.s_bar = s_bar_t
        if E1 < e <= E2:
            score_state.alpha_s = anneal_alpha_s(score_state.alpha_s, E1, E2)
        if e == E2 + 1:
            drop = select_drop_set(score_state.s_bar, m_prev, k)
            mask_state.m_target = mask_target(m_prev, drop)
            mask_state.alpha_m = 1.0
        if E2 < e <= E3:
            anneal_mask(mask_state, E2, E3)
        phase = "joint" if e <= E1 else "score" if e <= E2 else "mask" if e <= E3 else "task"
        before = loop.scoring_params()
        train_loss = loop.run_epoch(score_state, mask_state)
        val = loop.evaluate(loop.X_val, loop.Y_val, score_state, mask_state)
        history.append((e, val))
        trace.append(
            dict(epoch=e, phase=phase, alpha_s=score_state.alpha_s, alpha_m=mask_state.alpha_m,
                 train_loss=train_loss, val_loss=val, active=float(mask_state.m.sum()),
                 scoring_delta=_scoring_delta(before, loop.nets))
        )
        if e > E3:
            refine.append((e, val))
            if val < best:
                best, best_snap = val, loop.nets.snapshot()
            if early_stop(refine, sched.patience):
                break
    loop.nets.restore(best_snap)
    log.info("step %d (C=%d): %d epochs, best val %.6g", t, C_t, len(history), best)
    return _finish(loop, t, C_t, mask_state.m_target, score_state.s_bar, history, trace, start,
                   drop)


def run_step_one(dataset, nets: Networks, schedule: Schedule) -> StepArtifact:
    return _run_step_one(_Loop(dataset, schedule, nets))


def run_step_t(t, dataset, nets: Networks, schedule: Schedule, prev: StepArtifact,
               C_t=None) -> StepArtifact:
    C_t = schedule.C_list[t - 1] if C_t is None else C_t
    loop = _Loop(dataset, schedule, nets)
    loop.rng = np.random.default_rng([schedule.seed, t])
    return _run_step_t(loop, t, C_t, prev)


def train(dataset, schedule: Schedule, net_config: NetConfig | None = None,
          use_scoring_net=True, run_dir=None, on_step=None, nets=None) -> list[StepArtifact]:
    """Run every RFE step; one artifact per entry of ``schedule.C_list``.

    When ``run_dir`` is given each artifact is written as soon as its step
    finishes, so a later abort leaves the completed steps on disk.
    """
    from . import runs

    schedule.validate(dataset.n_channels)
    if nets is None:
        nets = Networks.build(dataset.n_channels, dataset.n_targets, net_config,
                              schedule.learning_rate, schedule.seed, use_scoring_net)
    loop = _Loop(dataset, schedule, nets)
    artifacts = []
    for t, C_t in enumerate(schedule.C_list, start=1):
        if t == 1:
            art = _run_step_one(loop)
        else:
            art = _run_step_t(loop, t, int(C_t), artifacts[-1])
        artifacts.append(art)
        if run_dir is not None:
            runs.save_step(run_dir, art, scheme=dataset.scheme, scoring_net=nets.scoring)
        if on_step is not None:
            on_step(art)
    return artifacts


def schedule_dict(schedule: Schedule) -> dict:
    return copy.deepcopy(asdict(schedule))
