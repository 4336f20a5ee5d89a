from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from nematic_waves.fixtures import DEFAULT_PARAMS, F3_T, fixture
from nematic_waves.solver import solve_data

settings.register_profile("artifact", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("artifact")

HORIZON = {"F1": 0.25, "F2": 0.4, "F3": F3_T, "trivial": 0.25}


@lru_cache(maxsize=None)
def solved(name: str, h: float, T: float = None):
    """Chart solution of a named fixture, shared across tests (treat as read-only)."""
    return solve_data(fixture(name), DEFAULT_PARAMS, h, HORIZON[name] if T is None else T)


@pytest.fixture(scope="session")
def params():
    return DEFAULT_PARAMS


@pytest.fixture(scope="session")
def f1_grid():
    return solved("F1", 1 / 100)


@pytest.fixture(scope="session")
def trivial_grid():
    return solved("trivial", 1 / 50)


@pytest.fixture(scope="session")
def f2_grid():
    return solved("F2", 1 / 100)


@pytest.fixture(scope="session")
def f3_grid():
    return solved("F3", 1 / 100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
