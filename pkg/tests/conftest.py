from __future__ import annotations

import pytest

from helpers import ACCEPTANCE_LINES, Mined


@pytest.fixture
def mined():
    return Mined()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
