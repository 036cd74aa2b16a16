from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from trajsearch.geometry import Segments

from .helpers import ACCEPTANCE_LINES, walk

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_entries() -> Segments:
    return walk(40, 30, seed=1)


@pytest.fixture(scope="session")
def small_queries() -> Segments:
    return walk(6, 30, seed=2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
