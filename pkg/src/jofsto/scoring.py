"""Per-sample feature scores, their blend with the population score, and averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .nn import DenseNet, forward

# decrements accumulate float error; anything this close to zero is zero
_SNAP = 1e-9


def sample_scores(scoring_net: DenseNet, inputs) -> np.ndarray:
    """Scores ``2 * sigmoid(S(X))`` for every row of ``inputs``."""
    if scoring_net.output_activation != "two_sigmoid":
        raise ConfigError("scoring network must end in a two_sigmoid activation")
    if scoring_net.n_outputs != scoring_net.n_inputs:
        raise ConfigError(
            f"scoring network maps {scoring_net.n_inputs} channels to "
            f"{scoring_net.n_outputs} scores"
        )
    return forward(scoring_net, inputs)[0]


@dataclass
class RunningMean:
    """Exact streamed column mean, accumulated in float64."""

    total: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, width):
        return cls(np.zeros(width, dtype=np.float64))

    def reset(self):
        self.total[:] = 0
        self.count = 0

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        return self.total / self.count


@dataclass
class ScoreState:
    s_bar: np.ndarray
    alpha_s: float = 1.0
    s_p: np.ndarray | None = None
    running_mean: RunningMean = field(default=None)

    def __post_init__(self):
        self.s_bar = np.asarray(self.s_bar, dtype=np.float64)
        if not 0.0 <= self.alpha_s <= 1.0:
            raise ValueError(f"alpha_s={self.alpha_s} outside [0, 1]")
        if self.running_mean is None:
            self.running_mean = RunningMean.empty(self.s_bar.size)

    @classmethod
    def initial(cls, n_channels):
        return cls(np.ones(n_channels), alpha_s=1.0)


def blend(state: ScoreState) -> np.ndarray:
    """Final score ``alpha_s * s_p + (1 - alpha_s) * s_bar`` (rows broadcast)."""
    s_bar = state.s_bar
    if state.alpha_s == 0.0 or state.s_p is None:
        if state.alpha_s != 0.0:
            raise ValueError("alpha_s > 0 requires per-sample scores")
        return s_bar[None, :]
    s_p = state.s_p
    if s_p.ndim != 2 or s_p.shape[1] != s_bar.size:
        raise ValueError(f"score widths disagree: {s_p.shape} vs {s_bar.shape}")
    if state.alpha_s == 1.0:
        return s_p
    a = state.alpha_s
    return (a * s_p + (1 - a) * s_bar).astype(s_p.dtype, copy=False)


def accumulate_mean(state: ScoreState, s_p_batch) -> ScoreState:
    batch = np.asarray(s_p_batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != state.running_mean.total.size:
        raise ValueError(f"batch width {batch.shape} does not match scores")
    state.running_mean.total += batch.sum(axis=0)
    state.running_mean.count += batch.shape[0]
    return state


def update_global(s_bar_prev, s_bar_p) -> np.ndarray:
    s_bar_prev = np.asarray(s_bar_prev, dtype=np.float64)
    s_bar_p = np.asarray(s_bar_p, dtype=np.float64)
    if s_bar_prev.shape != s_bar_p.shape:
        raise ValueError("score vectors differ in width")
    return 0.5 * (s_bar_prev + s_bar_p)


def anneal_alpha_s(alpha_s: float, E1: int, E2: int) -> float:
    if E2 <= E1:
        raise ConfigError(f"need E2 > E1, got E1={E1}, E2={E2}")
    value = max(alpha_s - 2.0 / (E2 - E1), 0.0)
    return 0.0 if value < _SNAP else value


def population_scores(scoring_net: DenseNet, inputs, batch_size=1500) -> np.ndarray:
    """Mean of the per-sample scores over every row of ``inputs``, streamed by batch."""
    state = ScoreState.initial(scoring_net.n_outputs)
    for start in range(0, len(inputs), batch_size):
        accumulate_mean(state, sample_scores(scoring_net, inputs[start : start + batch_size]))
    return state.running_mean.mean()
