import re

import pytest

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, text):
        line = f"criterion {str(number):>3}: {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE[str(number)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE, key=_order):
            terminalreporter.write_line(ACCEPTANCE[n])


def _order(key):
    num, rest = re.match(r"(\d+)(.*)", key).groups()
    return int(num), rest
