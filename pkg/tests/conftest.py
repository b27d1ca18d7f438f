import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flywheel.core import NoisyDataset

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_dataset(rng, N=40, d=3, K=3, with_truth=True):
    X = rng.standard_normal((N, d))
    y = rng.integers(0, K, size=N)
    noisy = np.where(rng.random(N) < 0.3, rng.integers(0, K, size=N), y)
    return NoisyDataset(X, noisy, K, y if with_truth else None)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def emit(key, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
