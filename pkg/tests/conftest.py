from importlib import resources
from pathlib import Path

import pytest

from stemkg.stemming import StopWordPolicy

DATA = Path(__file__).parent / "data"
FIXTURE = Path(str(resources.files("stemkg.data").joinpath("fixture")))

_criteria = []


@pytest.fixture
def fixture_dir():
    return FIXTURE


@pytest.fixture
def default_policy():
    return StopWordPolicy.default()


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints them all."""

    def record(number, ok, detail=""):
        _criteria.append((number, ok, detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_criteria, key=lambda c: c[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {detail}")
