import warnings

import numpy as np
import pytest

from juliatower.family import cubic_pm_a_family, quadratic_family, solve_critical_relation
from juliatower.tower import build_tower
from juliatower.transfer import assemble_operator, equilibrium_state, leading_eigendata

# criterion lines collected by the acceptance module
ACCEPTANCE_LINES = []


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=RuntimeWarning)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def chebyshev():
    """z^2 - 2 solved from the relation f^2(c) = f^3(c)."""
    return solve_critical_relation(quadratic_family(), [-1.9])


@pytest.fixture(scope="session")
def cheb_tower(chebyshev):
    return build_tower(chebyshev)


@pytest.fixture(scope="session")
def cheb_operator(cheb_tower):
    return assemble_operator(cheb_tower, 1.0)


@pytest.fixture(scope="session")
def cheb_eigen(cheb_operator):
    return leading_eigendata(cheb_operator)


@pytest.fixture(scope="session")
def cheb_state(cheb_eigen):
    return equilibrium_state(cheb_eigen)


@pytest.fixture(scope="session")
def cubic():
    spec = cubic_pm_a_family()
    return spec, solve_critical_relation(spec, [0.6, -0.77])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
