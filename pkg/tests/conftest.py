import numpy as np
import pytest

from synthevo.catalog import CompatibilityIndex
from synthevo.synthesis import Context


@pytest.fixture(scope="session")
def index():
    return CompatibilityIndex.build()


@pytest.fixture
def ctx(index):
    return Context(index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
