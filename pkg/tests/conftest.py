import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jofsto import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    """Normalized 16-channel surrogate data, 2000 rows split 1600/200/200."""
    ds = data.simulate(data.AcquisitionScheme.default(16), 2000, snr=50, seed=3)
    return data.normalize(data.split(ds, (1600, 200, 200), seed=3))


_ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}"
        line = f"criterion {self.number} {status}: {self.title}"
        if detail.strip():
            line += f" [{' '.join(detail.split())[:300]}]"
        _ACCEPTANCE[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records a PASS/FAIL line for the acceptance summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
