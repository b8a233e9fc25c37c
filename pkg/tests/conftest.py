import numpy as np
import pytest

from twohop.prob import TwoHopSource

ACCEPTANCE_LINES: list[str] = []


def record(label: str, ok: bool, detail: str) -> None:
    line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def dsbs():
    return TwoHopSource.dsbs(0.1, 0.1)


@pytest.fixture
def product_source():
    """X, Y and Z mutually independent, so both hypotheses coincide."""
    return TwoHopSource.from_arrays(np.outer([0.3, 0.7], [0.4, 0.6]),
                                    np.array([[0.25, 0.75], [0.25, 0.75]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
