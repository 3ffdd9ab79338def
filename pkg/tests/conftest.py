import numpy as np
import pytest

from beacontrace.energy import PowerChainConfig
from beacontrace.radio import RadioModel


@pytest.fixture
def model():
    return RadioModel()


@pytest.fixture
def quiet_model():
    return RadioModel(shadowing_sigma_db=0.0)


@pytest.fixture
def power():
    return PowerChainConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
