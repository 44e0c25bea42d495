import numpy as np
import pytest

from irsched.rate_model import RateModel
from irsched.two_phase import AckSchedule, ChannelSpec
from irsched.vlf_crc import ErrorModel

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def model():
    return RateModel(0.6374, 0.0579, 96)


@pytest.fixture(scope="session")
def err():
    return ErrorModel(0.165, 0.626, 0.056, 96)


@pytest.fixture(scope="session")
def chan():
    return ChannelSpec(2.0)


@pytest.fixture(scope="session")
def acks():
    return AckSchedule((5, 4, 3, 3, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
