import numpy as np
import pytest

from firesense.structgen import generate_structure, sample_fire_points


@pytest.fixture(scope="session")
def small_structure():
    return generate_structure(11, structure_id=11, counts=(2, 2, 2))


@pytest.fixture(scope="session")
def structures():
    return [generate_structure(s, structure_id=s) for s in range(6)]


@pytest.fixture(scope="session")
def fire(small_structure):
    return sample_fire_points(small_structure, 1, 3)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
