import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvmf.flowfield import Workspace

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ws():
    return Workspace.centered(390.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
