import numpy as np
import pytest

from bmint.geometry import make_grid, unit_square
from bmint.spectral import dirichlet_eigs


@pytest.fixture(scope="session")
def square():
    return unit_square(2)


@pytest.fixture(scope="session")
def grid64(square):
    return make_grid(square, 64)


@pytest.fixture(scope="session")
def grid32(square):
    return make_grid(square, 32)


@pytest.fixture(scope="session")
def basis64(grid64):
    return dirichlet_eigs(grid64, 300)


def sine_mode(grid, m, n):
    x, y = grid.coords
    return 2.0 * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
