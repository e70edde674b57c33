"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number: int, name: str, passed: bool, detail: str = ""):
        line = f"criterion {number:2d} {name:28s} {'PASS' if passed else 'FAIL'}  {detail}"
        VERDICTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
