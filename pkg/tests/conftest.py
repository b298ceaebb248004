import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prodsphere.geometry import GeodesicCap
from prodsphere.kernel import ProblemDims

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def dims21():
    return ProblemDims(2, 1)


@pytest.fixture
def cap3():
    return GeodesicCap(2, np.pi / 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
