"""scikit-learn compatible wrappers around the trainer and the random baseline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import data
from .baselines import random_select, train_baseline
from .exceptions import ConfigError
from .trainer import NetConfig, Schedule, infer, train


def halving_schedule(n_channels: int, n_final: int) -> list[int]:
    """``[C, ceil(C/2), ceil(C/4), ...]`` stopping at ``n_final``."""
    if not 1 <= n_final <= n_channels:
        raise ConfigError(f"cannot select {n_final} of {n_channels} channels")
    sizes = [n_channels]
    c = -(-n_channels // 2)
    while c > n_final:
        sizes.append(c)
        c = -(-c // 2)
    if n_final < n_channels:
        sizes.append(n_final)
    return sizes


def _seed(random_state) -> int:
    if random_state is None:
        return int(np.random.randint(0, 2**31 - 1))
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(random_state.randint(0, 2**31 - 1))


def _prepare(X, y, X_val, y_val, validation_fraction, seed):
    X, y = check_X_y(X, y, multi_output=True, dtype=[np.float64, np.float32])
    if (X_val is None) != (y_val is None):
        raise ValueError("pass both X_val and y_val, or neither")
    if X_val is not None:
        X_val, y_val = check_X_y(X_val, y_val, multi_output=True, dtype=[np.float64, np.float32])
        if X_val.shape[1] != X.shape[1]:
            raise ValueError("validation data has a different number of channels")
        n = len(X)
        ds = data.Dataset(
            np.vstack([X, X_val]),
            np.concatenate([y.reshape(n, -1), y_val.reshape(len(y_val), -1)]),
            train=np.arange(n),
            val=np.arange(n, n + len(X_val)),
        )
    else:
        if not 0 < validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        ds = data.split(data.Dataset(X, y), (1 - validation_fraction, validation_fraction), seed)
    return data.normalize(ds), y.ndim == 1


class _TrainedChannelsMixin:
    def _check_input(self, X):
        check_is_fitted(self, "steps_")
        X = check_array(X, dtype=[np.float64, np.float32])
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} channels, got {X.shape[1]}")
        return X / self.normalizers_

    def _output(self, pred):
        return pred[:, 0] if self._y_1d else pred


class JofstoSelector(_TrainedChannelsMixin, SelectorMixin, RegressorMixin, BaseEstimator):
    """Jointly learn a channel subset and a regressor that works from that subset.

    ``fit`` trains one model per subset size in ``subset_sizes`` (by default a
    halving schedule down to ``n_features_to_select``). ``transform`` keeps the
    channels of the smallest subset and ``predict`` uses its task network; pass
    ``n_features=`` to ``predict`` to use a larger intermediate subset.

    Inputs are scaled by their training 99th percentiles; targets are used as
    given.
    """

    def __init__(self, n_features_to_select=None, subset_sizes=None, e1=25, e2=35, e3=45,
                 patience=10, batch_size=1500, learning_rate=1e-4, hidden_layers=2,
                 hidden_units=100, use_scoring_net=True, validation_fraction=0.1,
                 max_epochs=1000, random_state=None):
        self.n_features_to_select = n_features_to_select
        self.subset_sizes = subset_sizes
        self.e1 = e1
        self.e2 = e2
        self.e3 = e3
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.use_scoring_net = use_scoring_net
        self.validation_fraction = validation_fraction
        self.max_epochs = max_epochs
        self.random_state = random_state

    def _schedule(self, n_channels, seed) -> Schedule:
        if self.subset_sizes is not None:
            sizes = [int(c) for c in self.subset_sizes]
            if sizes[0] != n_channels:
                sizes = [n_channels] + sizes
        else:
            target = self.n_features_to_select or max(1, n_channels // 2)
            sizes = halving_schedule(n_channels, int(target))
        return Schedule(sizes, self.e1, self.e2, self.e3, self.patience, self.batch_size,
                        self.learning_rate, seed, self.max_epochs).validate(n_channels)

    def fit(self, X, y, X_val=None, y_val=None):
        seed = _seed(self.random_state)
        ds, self._y_1d = _prepare(X, y, X_val, y_val, self.validation_fraction, seed)
        self.n_features_in_ = ds.n_channels
        self.schedule_ = self._schedule(ds.n_channels, seed)
        self.normalizers_ = ds.normalizers
        self.steps_ = train(ds, self.schedule_, NetConfig(self.hidden_layers, self.hidden_units),
                            use_scoring_net=self.use_scoring_net)
        return self

    def step_for(self, n_features=None):
        check_is_fitted(self, "steps_")
        if n_features is None:
            return self.steps_[-1]
        for art in self.steps_:
            if art.C == n_features:
                return art
        raise ValueError(f"no trained subset of size {n_features}; have {self.subset_sizes_}")

    @property
    def subset_sizes_(self):
        return [a.C for a in self.steps_]

    @property
    def feature_scores_(self):
        return self.step_for().score

    def _get_support_mask(self):
        return self.step_for().mask == 1

    def predict(self, X, n_features=None):
        return self._output(infer(self.step_for(n_features), self._check_input(X)))


class RandomSubsetRegressor(_TrainedChannelsMixin, SelectorMixin, RegressorMixin, BaseEstimator):
    """Baseline: a random channel subset, then a task network trained on it."""

    def __init__(self, n_features_to_select=1, patience=10, batch_size=1500,
                 learning_rate=1e-4, hidden_layers=2, hidden_units=100,
                 validation_fraction=0.1, max_epochs=1000, random_state=None):
        self.n_features_to_select = n_features_to_select
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.validation_fraction = validation_fraction
        self.max_epochs = max_epochs
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        seed = _seed(self.random_state)
        ds, self._y_1d = _prepare(X, y, X_val, y_val, self.validation_fraction, seed)
        self.n_features_in_ = ds.n_channels
        self.normalizers_ = ds.normalizers
        schedule = Schedule([ds.n_channels], patience=self.patience, batch_size=self.batch_size,
                            learning_rate=self.learning_rate, seed=seed,
                            max_epochs=self.max_epochs)
        selected = random_select(ds.n_channels, self.n_features_to_select, seed)
        result = train_baseline(ds, selected, schedule,
                                NetConfig(self.hidden_layers, self.hidden_units))
        self.selected_ = result.selected
        self.steps_ = [result.artifact]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "steps_")
        return self.steps_[0].mask == 1

    def predict(self, X):
        return self._output(infer(self.steps_[0], self._check_input(X)))
