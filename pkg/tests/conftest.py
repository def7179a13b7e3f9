import numpy as np
import pytest

from capdmf.dsp import SystemParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240129)


@pytest.fixture(scope="session")
def system():
    return SystemParams()


@pytest.fixture(scope="session")
def pair(system):
    return system.filter_pair()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
