import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from proxsampler import samplers

settings.register_profile(
    "default", settings(deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def check_support(monkeypatch):
    # every completed iteration re-checks that chains stayed in the support
    monkeypatch.setattr(samplers, "CHECK_SUPPORT", True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
