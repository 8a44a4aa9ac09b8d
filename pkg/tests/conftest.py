import pytest

from voi.core import FocalSubset
from voi.models import ToyModel, toy_generator

ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    """Print (and remember for the terminal summary) one acceptance line."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy():
    return ToyModel()


@pytest.fixture
def toy_focal():
    return FocalSubset.from_names(["pi1"], ToyModel.parameter_names)


@pytest.fixture
def toy_gen(toy):
    return toy_generator(20, toy)
