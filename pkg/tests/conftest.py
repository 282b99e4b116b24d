import numpy as np
import pytest

from shiftfuse.data import Dataset
from shiftfuse.sim import DGPSpec, generate

ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_dataset(rng, n=40, m=30, p=2, pi=0.5):
    """Small pooled sample with both arms populated and a mild shift."""
    while True:
        t = (rng.random(n) < pi).astype(int)
        if 2 <= t.sum() <= n - 2:
            break
    xt = rng.normal(0.3, 1.0, (n, p))
    xe = rng.normal(-0.2, 1.2, (m, p))
    yt = 1 + xt.sum(axis=1) + t * (0.5 + 0.3 * xt[:, 0]) + rng.normal(0, 1, n)
    ye = 1.4 + xe.sum(axis=1) + rng.normal(0, 1, m)
    return Dataset(np.r_[np.ones(n), np.zeros(m)], np.r_[t, np.zeros(m)],
                   np.vstack([xt, xe]), np.r_[yt, ye])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def synthetic():
    return generate(DGPSpec(), 7)
