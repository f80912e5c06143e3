import numpy as np
import pytest

from gibbsgap.models import GibbsEnsemble, ising


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ising4():
    """Open Ising chain, n = 4, beta = 0.7."""
    return GibbsEnsemble(ising((4,)), 0.7)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical check")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
