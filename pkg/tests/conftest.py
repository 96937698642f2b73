import os

import pytest

os.environ.setdefault("GIBBSDIM_THREADS", "1")

from gibbsdim.measures import Geometric, LogSquare  # noqa: E402
from gibbsdim.partition import GaussPartition  # noqa: E402

CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def gauss():
    return GaussPartition()


@pytest.fixture(scope="session")
def logsquare():
    return LogSquare()


@pytest.fixture(scope="session")
def geo_half():
    return Geometric(0.5)


@pytest.fixture(scope="session")
def criterion_log():
    return CRITERION_LINES


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
