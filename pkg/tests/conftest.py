import numpy as np
import pytest

from confsynth.dataset import LabeledDataset


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def two_class_1d():
    # class 0 at {0, 2, 5}, class 1 at {10, 11}
    return LabeledDataset(np.array([[0.0], [2.0], [5.0], [10.0], [11.0]]), np.array([0, 0, 0, 1, 1]))
