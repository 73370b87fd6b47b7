from pathlib import Path

import numpy as np
import pytest

from markovcp.markov import StateSpace, conflict_reference_chain

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def chain():
    return conflict_reference_chain()


@pytest.fixture(scope="session")
def space4():
    return StateSpace(4)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


def reference_probs():
    return np.array(
        [
            [0.895, 0.105, 0.0, 0.0],
            [0.0, 0.0, 0.5, 0.5],
            [0.0, 0.0, 0.722, 0.278],
            [0.653, 0.347, 0.0, 0.0],
        ]
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
