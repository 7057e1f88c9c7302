import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from magnav_online.field_models import AnomalyMap2D, GaussianBump, InterferenceTruth  # noqa: E402
from magnav_online.toy.trajectories import default_plan, generate_trajectory  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_map():
    return AnomalyMap2D.random_bumps()


@pytest.fixture(scope="session")
def short_lawnmower(default_map):
    return generate_trajectory(default_plan("lawnmower", duration=300.0), domain=default_map.domain)


@pytest.fixture(scope="session")
def flat_map():
    return AnomalyMap2D.gaussian_sum([], bounds=(0.0, 2000.0, 0.0, 2000.0))


@pytest.fixture(scope="session")
def single_bump():
    return AnomalyMap2D.gaussian_sum([GaussianBump((0.0, 0.0), 100.0, 50.0)])


@pytest.fixture(scope="session")
def zero_truth():
    return InterferenceTruth((0.0,) * 7)
