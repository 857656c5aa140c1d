"""Error metrics, selection overlap, and seed-stability summaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

REPORT_SCALE = 1e2


@dataclass
class RunSummary:
    method: str
    C: int
    seed: int
    test_mse: float
    selected: frozenset = field(default_factory=frozenset)
    wall_time: float = 0.0

    def __post_init__(self):
        self.selected = frozenset(int(i) for i in self.selected)
        if self.selected and len(self.selected) != self.C:
            raise ValueError(f"{len(self.selected)} channels selected but C={self.C}")


def mse_metric(pred, target) -> float:
    """Raw (unscaled) mean squared error; multiply by ``REPORT_SCALE`` only for display."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def jaccard(a, b) -> float:
    """``|A & B| / |A | B|``; two empty sets count as identical (1.0)."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def seed_stability(runs) -> tuple[float, float]:
    """Population std of test MSE and mean pairwise Jaccard over runs with one C."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("seed stability needs at least two runs")
    if len({r.C for r in runs}) != 1:
        raise ValueError("runs mix different subset sizes")
    std = float(np.std([r.test_mse for r in runs]))
    pairs = [jaccard(a.selected, b.selected) for a, b in itertools.combinations(runs, 2)]
    return std, float(np.mean(pairs))


def aggregate(runs, scale=REPORT_SCALE) -> list[dict]:
    """One row per (method, C): mean/std of MSE (scaled), mean Jaccard, seed count."""
    groups = {}
    for r in runs:
        groups.setdefault((r.method, r.C), []).append(r)
    rows = []
    for (method, C), group in sorted(groups.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        mses = [r.test_mse for r in group]
        row = dict(method=method, C=C, seeds=len(group), mean_mse=float(np.mean(mses)) * scale)
        if len(group) > 1:
            std, jac = seed_stability(group)
            row.update(std_mse=std * scale, mean_jaccard=jac)
        rows.append(row)
    return rows


def format_table(rows, columns) -> str:
    """Aligned plain-text table."""
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
