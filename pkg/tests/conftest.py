import logging

import numpy as np
import pytest

from kdvb.grid import make_grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_grid():
    return make_grid(1.0, 41)


@pytest.fixture(autouse=True)
def _quiet_kernel_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="kdvb")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
