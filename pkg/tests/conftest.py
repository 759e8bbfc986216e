import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bark.space import Categorical, Continuous, FeatureSpace, Integer

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def mixed_space():
    return FeatureSpace((Continuous(0.0, 1.0, "a"), Integer(-2, 3, "b"),
                         Categorical(4, "c", ("r", "g", "b", "k"))))


@pytest.fixture
def unit_space():
    return FeatureSpace((Continuous(0.0, 1.0, "x"),))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
