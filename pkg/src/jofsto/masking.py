"""Subsampling masks: which channels to drop, annealing, and fill substitution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

_SNAP = 1e-9


@dataclass
class MaskState:
    m: np.ndarray
    m_prev: np.ndarray
    m_target: np.ndarray
    fill: np.ndarray
    alpha_m: float = 1.0

    @classmethod
    def full(cls, fill):
        fill = np.asarray(fill)
        ones = np.ones(fill.size)
        return cls(ones.copy(), ones.copy(), ones.copy(), fill, alpha_m=0.0)

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.m == 0) | (self.m == 1)))


def apply_mask(inputs, state: MaskState) -> np.ndarray:
    """``m * X + (1 - m) * fill`` per channel."""
    x = np.asarray(inputs)
    if x.ndim != 2 or x.shape[1] != state.m.size or state.fill.size != state.m.size:
        raise ValueError(f"inputs {x.shape} do not match a mask of width {state.m.size}")
    m = state.m.astype(x.dtype)
    if np.all(m == 1):
        return x
    return (m * x + (1 - m) * state.fill.astype(x.dtype)).astype(x.dtype, copy=False)


def select_drop_set(s_bar_t, m_prev, k: int) -> np.ndarray:
    """Indices of the ``k`` active channels with the lowest score, ties to lower index."""
    s_bar_t = np.asarray(s_bar_t)
    active = np.flatnonzero(np.asarray(m_prev) == 1)
    if k < 0 or k > active.size:
        raise ConfigError(f"cannot drop {k} of {active.size} active channels")
    order = np.argsort(s_bar_t[active], kind="stable")
    return np.sort(active[order[:k]])


def mask_target(m_prev, drop) -> np.ndarray:
    m_prev = np.asarray(m_prev, dtype=np.float64)
    drop = np.asarray(drop, dtype=np.intp)
    if drop.size and not np.all(m_prev[drop] == 1):
        raise AssertionError(f"drop set {drop.tolist()} includes inactive channels")
    if np.unique(drop).size != drop.size:
        raise AssertionError("drop set contains duplicates")
    out = m_prev.copy()
    out[drop] = 0
    return out


def anneal_mask(state: MaskState, E2: int, E3: int) -> MaskState:
    """Move ``alpha_m`` one epoch closer to 0 and recompute the blended mask."""
    if E3 <= E2:
        raise ConfigError(f"need E3 > E2, got E2={E2}, E3={E3}")
    alpha = max(state.alpha_m - 1.0 / (E3 - E2), 0.0)
    state.alpha_m = 0.0 if alpha < _SNAP else alpha
    if state.alpha_m == 0.0:
        state.m = state.m_target.copy()
    else:
        state.m = state.alpha_m * state.m_prev + (1 - state.alpha_m) * state.m_target
    return state


def compute_fill(train_inputs) -> np.ndarray:
    """Column medians of the training inputs."""
    x = np.asarray(train_inputs)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("fill needs at least one training row")
    return np.median(x, axis=0)
