import pytest
import torch
from hypothesis import HealthCheck, settings

from least.synthetic import make_desk_fixtures

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

torch.manual_seed(0)


@pytest.fixture(scope="session")
def desk64():
    """The five synthetic scenes at 64x64, shared across unit tests."""
    return make_desk_fixtures(64)


@pytest.fixture()
def house64(desk64):
    return desk64[0]


@pytest.fixture()
def disc64(desk64):
    return desk64[1]
