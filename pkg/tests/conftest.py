import numpy as np
import pytest

from otmageom.fields import CostFunction, Density

_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


CUBE = [[-1.0, 1.0]] * 3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gaussian_source():
    return Density.truncated_gaussian(CUBE, [0.2, -0.1, 0.3], np.diag([0.5, 0.3, 0.4]))


@pytest.fixture(scope="session")
def correlated_source():
    cov = np.array([[0.5, 0.1, 0.0], [0.1, 0.4, -0.05], [0.0, -0.05, 0.3]])
    return Density.truncated_gaussian(CUBE, [0.0, 0.1, -0.2], cov)


@pytest.fixture(scope="session")
def uniform_target():
    return Density.uniform([[-2.0, 2.0], [-1.5, 1.5], [-1.0, 3.0]])


@pytest.fixture(scope="session")
def quadratic():
    return CostFunction.quadratic()


@pytest.fixture(scope="session")
def semigeostrophic():
    return CostFunction.semigeostrophic(1.0)
