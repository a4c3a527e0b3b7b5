import numpy as np
import pytest

from pointfield.fock import build_fock
from pointfield.models import CFG_A
from pointfield.phasespace import assemble
from pointfield.spmodel import build_grid

# one line per acceptance criterion, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid_a():
    return build_grid(3, 1.0, 8.0, 4, 1)


@pytest.fixture(scope="session")
def basis_a(grid_a):
    return build_fock(grid_a, 2)


@pytest.fixture(scope="session")
def tensor_a():
    return assemble(CFG_A)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
