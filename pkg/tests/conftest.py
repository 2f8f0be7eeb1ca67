import numpy as np
import pytest

from vmixer.engine import get_tape


@pytest.fixture(autouse=True)
def _clean_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = {}


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line, echo it, then assert on it."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria):
            terminalreporter.write_line(_criteria[number])
