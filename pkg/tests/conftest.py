import warnings

import numpy as np
import pytest

from safeswarm.mission import build_barrier_tree, load_bundled
from safeswarm.smoothing import SmoothBarrier


@pytest.fixture(autouse=True)
def _quiet_outside_safe_set():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="filter called outside")
        yield


@pytest.fixture(scope="session")
def multi_scenario():
    return load_bundled("multi_obstacle")


@pytest.fixture(scope="session")
def single_scenario():
    return load_bundled("single_obstacle")


@pytest.fixture(scope="session")
def multi_barrier(multi_scenario):
    s = multi_scenario
    return SmoothBarrier(build_barrier_tree(s), s.smoothing(), 2 * s.n_agents)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
