import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kp5ctl.operators import DampingProfile, ModelParams
from kp5ctl.spectral import GridSpec

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def small_grid():
    return GridSpec(K=8, M=8, Ly=8 * math.pi)


@pytest.fixture
def g8():
    return DampingProfile.raised_cosine(8)
