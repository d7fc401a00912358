import os
import sys

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from side_fd.benchmark import BenchmarkParams  # noqa: E402
from side_fd.grid import Grid, GridFunction  # noqa: E402
from side_fd.levy import LevyMeasure  # noqa: E402
from side_fd.noise import DEFAULT_EPS, NoisePath  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size acceptance runs, enabled with SIDE_FD_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("SIDE_FD_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SIDE_FD_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def params():
    return BenchmarkParams()


@pytest.fixture
def measure():
    return LevyMeasure()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def interior_random(grid: Grid, rng, margin: float = 4.0) -> GridFunction:
    """Random values supported well inside the grid."""
    values = rng.standard_normal(grid.count)
    values[np.abs(grid.nodes) > grid.radius - margin] = 0.0
    return GridFunction(grid, values)


def quiet_path(T: float, tau: float, eps: float = DEFAULT_EPS, jump_times=(), jump_sizes=(), wiener=None):
    """Noise path with no randomness unless increments or jumps are passed in."""
    steps = int(round(T / tau))
    w = np.zeros((steps, 1)) if wiener is None else np.asarray(wiener, dtype=float).reshape(steps, 1)
    return NoisePath(
        T=T,
        tau_fine=tau,
        eps=eps,
        seed=0,
        stream=0,
        wiener=w,
        small_variance=0.0,
        small_jump_wiener=np.zeros(steps),
        jump_times=np.asarray(jump_times, dtype=float),
        jump_sizes=np.asarray(jump_sizes, dtype=float),
        intensity=0.0,
        compensator_mean=0.0,
    )


def gaussian(x, s=1.0):
    return np.exp(-x * x / (2 * s)) / np.sqrt(2 * np.pi * s)


def gaussian_d1(x, s=1.0):
    return -x / s * gaussian(x, s)


def gaussian_d2(x, s=1.0):
    return (x * x / s - 1.0) / s * gaussian(x, s)
