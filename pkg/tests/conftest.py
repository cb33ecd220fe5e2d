import numpy as np
import pytest

from pase.data import Dataset
from pase.rng import SplitMix64

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def blobs2():
    """Two linearly separable 2-D classes around (-2, 0) and (2, 0), 40 samples each."""
    noise = SplitMix64(11).normal(160).reshape(80, 2) * 0.3
    centers = np.repeat([[-2.0, 0.0], [2.0, 0.0]], 40, axis=0)
    return make_dataset(centers + noise, np.repeat([0, 1], 40), 2)


def make_dataset(x, y, classes=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    return Dataset(x, y, np.arange(len(y), dtype=np.uint64), classes or int(y.max()) + 1)
