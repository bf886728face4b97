import numpy as np
import pytest

from pairseld.calibration import DoaGrid, analytic_table, tetrahedral_geometry
from pairseld.dsp import StftConfig, TdoaLattice


@pytest.fixture(scope="session")
def stft():
    return StftConfig()


@pytest.fixture(scope="session")
def lattice():
    return TdoaLattice()


@pytest.fixture(scope="session")
def grid():
    return DoaGrid()


@pytest.fixture(scope="session")
def geometry():
    return tetrahedral_geometry()


@pytest.fixture(scope="session")
def table(geometry, grid, stft, lattice):
    return analytic_table(geometry, grid, stft.sample_rate, lattice)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
