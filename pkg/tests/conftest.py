import numpy as np
import pytest

from dirac_rls.dirac_algebra import Kinematics
from dirac_rls.discretization import build_volume_grid
from dirac_rls.potentials import PotentialSpec
from dirac_rls.rls_solver import assemble

# Yukawa set-up used across the solver tests: max |delta| about 0.3 at lam = 1.5 m
YUKAWA = PotentialSpec("yukawa", 0.63, 2.5)


@pytest.fixture(scope="session")
def kin():
    return Kinematics(1.0, 1.5)


@pytest.fixture(scope="session")
def small_grid():
    return build_volume_grid(4.8, 16, 14)


@pytest.fixture(scope="session")
def yukawa_op(kin, small_grid):
    return assemble(kin, YUKAWA, small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
