import numpy as np
import pytest

from l3net.graph import build_chain, build_grid, build_ring

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ring8():
    return build_ring(8)


@pytest.fixture
def chain6():
    return build_chain(6)


@pytest.fixture
def grid7():
    return build_grid(7, 7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
