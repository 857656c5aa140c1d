"""Synthetic signals, matrix file I/O, channel normalization and splits.

The simulated signal is a two-compartment exponential decay,
``f * exp(-b * D_fast) + (1 - f) * exp(-b * D_slow)``, measured with Rician
noise whose standard deviation is set against the unweighted (``b = 0``)
signal ``S0 = 1``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError

MATRIX_MAGIC = b"JFMX"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sIQQ")

PARAM_NAMES = ("f", "D_fast", "D_slow")
# (low, high) sampling bounds per parameter; D in um^2/ms against b in ms/um^2
DEFAULT_BOUNDS = {"f": (0.01, 0.99), "D_fast": (1.0, 3.0), "D_slow": (0.05, 0.8)}


@dataclass(frozen=True)
class AcquisitionScheme:
    """One row of acquisition parameters per channel; column 0 is the b-value."""

    params: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        if params.shape[0] == 1 and np.asarray(self.params).ndim == 1:
            params = params.T
        if params.shape[0] < 1:
            raise ConfigError("scheme needs at least one channel")
        if np.unique(params, axis=0).shape[0] != params.shape[0]:
            raise ConfigError("scheme rows must be unique")
        if self.labels and len(self.labels) != params.shape[0]:
            raise ConfigError("one label per channel expected")
        object.__setattr__(self, "params", params)

    @classmethod
    def default(cls, n_channels=64, b_max=3.0):
        """Evenly spaced b-values from 0 to ``b_max``."""
        return cls(np.linspace(0.0, b_max, n_channels)[:, None])

    @property
    def n_channels(self) -> int:
        return self.params.shape[0]

    @property
    def b_values(self) -> np.ndarray:
        return self.params[:, 0]

    def subset(self, mask) -> AcquisitionScheme:
        keep = np.flatnonzero(np.asarray(mask) == 1)
        labels = tuple(self.labels[i] for i in keep) if self.labels else ()
        return AcquisitionScheme(self.params[keep], labels)

    def to_csv(self, path):
        d = self.params.shape[1]
        header = ["b"] + [f"a{j}" for j in range(1, d)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", *header] + (["label"] if self.labels else []))
            for i, row in enumerate(self.params):
                extra = [self.labels[i]] if self.labels else []
                writer.writerow([i, *(repr(float(v)) for v in row), *extra])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise FormatError(f"{path}: empty scheme file")
        header, body = rows[0], rows[1:]
        has_label = header[-1] == "label"
        stop = -1 if has_label else None
        params = np.array([[float(v) for v in r[1:stop]] for r in body])
        labels = tuple(r[-1] for r in body) if has_label else ()
        return cls(params, labels)


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, np.float32), copy=False)


@dataclass
class Dataset:
    X_bar: np.ndarray
    Y: np.ndarray
    train: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.intp))
    val: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.intp))
    test: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.intp))
    normalizers: np.ndarray | None = None
    fill: np.ndarray | None = None
    scheme: AcquisitionScheme | None = None

    def __post_init__(self):
        self.X_bar = _as_float(self.X_bar)
        self.Y = _as_float(self.Y)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X_bar.ndim != 2 or self.X_bar.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X {self.X_bar.shape} and Y {self.Y.shape} row counts differ")
        for name in ("train", "val", "test"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.intp))
        used = np.concatenate([self.train, self.val, self.test])
        if np.unique(used).size != used.size:
            raise ValueError("splits overlap")
        if used.size and (used.min() < 0 or used.max() >= self.n):
            raise ValueError("split index out of range")

    @property
    def n(self) -> int:
        return self.X_bar.shape[0]

    @property
    def n_channels(self) -> int:
        return self.X_bar.shape[1]

    @property
    def n_targets(self) -> int:
        return self.Y.shape[1]

    def part(self, name) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self, name)
        return self.X_bar[idx], self.Y[idx]


# -- simulation ---------------------------------------------------------------


def surrogate_signal(b_values, f, d_fast, d_slow) -> np.ndarray:
    """Clean signal, one row per parameter set, one column per b-value."""
    b = np.asarray(b_values, dtype=np.float64)[None, :]
    f = np.asarray(f, dtype=np.float64)[:, None]
    return f * np.exp(-b * np.asarray(d_fast)[:, None]) + (1 - f) * np.exp(
        -b * np.asarray(d_slow)[:, None]
    )


def rician(clean, sigma, rng) -> np.ndarray:
    """Magnitude of a complex Gaussian perturbation of ``clean``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    clean = np.asarray(clean, dtype=np.float64)
    if sigma == 0:
        return clean.copy()
    g1 = rng.standard_normal(clean.shape)
    g2 = rng.standard_normal(clean.shape)
    return np.sqrt((clean + g1 * sigma) ** 2 + (g2 * sigma) ** 2)


def _check_bounds(bounds):
    for name in PARAM_NAMES:
        if name not in bounds:
            raise ConfigError(f"missing bounds for {name}")
        lo, hi = bounds[name]
        if not lo < hi:
            raise ConfigError(f"empty range for {name}: {lo}..{hi}")
    if not (0 <= bounds["f"][0] and bounds["f"][1] <= 1):
        raise ConfigError("volume fraction bounds must lie in [0, 1]")
    if bounds["D_slow"][0] <= 0 or bounds["D_fast"][0] < bounds["D_slow"][1]:
        raise ConfigError("need 0 < D_slow ranges below D_fast ranges")


def simulate(scheme: AcquisitionScheme, n: int, snr=50.0, seed=0, bounds=None) -> Dataset:
    """Draw ``n`` parameter sets uniformly within ``bounds`` and simulate noisy signals.

    Targets are the parameters min-max scaled to [0, 1] by their bounds. Pass
    ``snr=np.inf`` to switch the noise off.
    """
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    if not snr > 0:
        raise ConfigError(f"snr must be positive, got {snr}")
    bounds = dict(DEFAULT_BOUNDS if bounds is None else bounds)
    _check_bounds(bounds)
    rng = np.random.default_rng(seed)
    unit = rng.uniform(size=(n, len(PARAM_NAMES)))
    lo = np.array([bounds[p][0] for p in PARAM_NAMES])
    hi = np.array([bounds[p][1] for p in PARAM_NAMES])
    theta = lo + unit * (hi - lo)
    clean = surrogate_signal(scheme.b_values, *theta.T)
    sigma = 0.0 if np.isinf(snr) else 1.0 / snr
    X = rician(clean, sigma, rng)
    return Dataset(X, unit, scheme=scheme)


def unscale_targets(Y, bounds=None) -> np.ndarray:
    """Map [0, 1]-scaled targets back to parameter units."""
    bounds = DEFAULT_BOUNDS if bounds is None else bounds
    lo = np.array([bounds[p][0] for p in PARAM_NAMES])
    hi = np.array([bounds[p][1] for p in PARAM_NAMES])
    return lo + np.asarray(Y, dtype=np.float64) * (hi - lo)


def append_noise_channels(dataset: Dataset, k: int, snr=50.0, seed=0) -> Dataset:
    """Add ``k`` channels carrying Rician noise around levels unrelated to the targets."""
    rng = np.random.default_rng(seed)
    level = rng.uniform(0.05, 1.0, size=(dataset.n, k))
    noise = rician(level, 1.0 / snr, rng).astype(dataset.X_bar.dtype)
    # noise channels have no acquisition settings, so the scheme is dropped
    return replace(dataset, X_bar=np.hstack([dataset.X_bar, noise]), scheme=None)


# -- normalization and splits -------------------------------------------------


def nearest_rank_percentile(x, q=99) -> np.ndarray:
    """Per-column value at 1-based rank ``ceil(q * n / 100)`` of the sorted column."""
    x = np.asarray(x)
    n = x.shape[0]
    if n == 0:
        raise ConfigError("percentile of an empty column")
    rank = max(1, -(-q * n // 100))
    return np.sort(x, axis=0)[rank - 1]


def normalize(dataset: Dataset) -> Dataset:
    """Divide every channel by its training-split 99th percentile; also sets the fill."""
    from .masking import compute_fill

    if dataset.train.size == 0:
        raise ConfigError("normalization needs a non-empty training split")
    p = nearest_rank_percentile(dataset.X_bar[dataset.train])
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise ConfigError(f"channels {bad.tolist()} have a non-positive 99th percentile")
    X = dataset.X_bar / p
    prior = dataset.normalizers if dataset.normalizers is not None else 1
    return replace(
        dataset,
        X_bar=X,
        normalizers=p * prior,
        fill=compute_fill(X[dataset.train]),
    )


def split(dataset: Dataset, sizes=(0.8, 0.1, 0.1), seed=0) -> Dataset:
    """Shuffle rows and assign train/val/test.

    ``sizes`` summing to at most 1 are fractions of the rows; larger sums are
    read as row counts.
    """
    sizes = list(sizes) + [0] * (3 - len(sizes))
    n = dataset.n
    if min(sizes) < 0:
        raise ConfigError(f"split sizes {sizes} must be non-negative")
    if sum(sizes) <= 1:
        counts = [int(round(s * n)) for s in sizes]
        # rounding may overshoot by one; take it from the largest part
        while sum(counts) > n:
            counts[int(np.argmax(counts))] -= 1
    else:
        if any(float(s) != int(s) for s in sizes):
            raise ConfigError(f"split sizes {sizes} are neither fractions nor counts")
        counts = [int(s) for s in sizes]
        if sum(counts) > n:
            raise ConfigError(f"split counts {counts} exceed {n} rows")
    order = np.random.default_rng(seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return replace(
        dataset,
        train=np.sort(order[:a]),
        val=np.sort(order[a:b]),
        test=np.sort(order[b : b + counts[2]]),
    )


# -- matrix files -------------------------------------------------------------


def save_matrix(path, matrix):
    """Write ``JFMX`` | version u32 | n u64 | cols u64 | row-major float32."""
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m[:, None]
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, m.shape[0], m.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_matrix(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: header truncated", offset=len(blob))
    magic, version, n, cols = _MATRIX_HEADER.unpack_from(blob)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    expected = _MATRIX_HEADER.size + 4 * n * cols
    if len(blob) != expected:
        raise FormatError(
            f"{path}: header declares {n}x{cols} floats but payload is "
            f"{len(blob) - _MATRIX_HEADER.size} bytes",
            offset=min(len(blob), expected),
        )
    data = np.frombuffer(blob, "<f4", n * cols, _MATRIX_HEADER.size)
    return data.reshape(n, cols).astype(np.float32)


def save_csv(path, matrix, header=None):
    m = np.asarray(matrix, dtype=np.float32)
    if header is None:
        header = [f"c{j}" for j in range(m.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in m:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float32)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_any(path) -> np.ndarray:
    path = Path(path)
    return load_csv(path) if path.suffix.lower() == ".csv" else load_matrix(path)
