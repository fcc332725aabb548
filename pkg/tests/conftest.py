import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bitpim.engine import NetworkProgram, run_network
from bitpim.models import calibrate_bn, random_network, sample_input

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY_ARCH = (
    ("conv", 4, 3, 1, False),
    ("conv", 8, 3, 1, True),
    ("avgpool", 2),
    ("conv", 8, 3, 1, True),
    ("fc", 5, False),
)
TINY_SHAPE = (2, 8, 8)


@pytest.fixture(scope="session")
def tiny_network():
    net = random_network(TINY_ARCH, TINY_SHAPE, 1, 1, seed=1)
    return calibrate_bn(net, sample_input(0, TINY_SHAPE))


@pytest.fixture(scope="session")
def tiny_input():
    return sample_input(0, TINY_SHAPE)


@pytest.fixture(scope="session")
def tiny_reference(tiny_network, tiny_input):
    return run_network(NetworkProgram(tiny_network), tiny_input).scores


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
