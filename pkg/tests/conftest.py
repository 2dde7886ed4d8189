from pathlib import Path

import pytest

from eonblock.report import read_report

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def published():
    """Loader for the checked-in reference tables."""

    def load(name: str):
        return read_report(FIXTURES / f"published_{name}.csv")

    return load


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
