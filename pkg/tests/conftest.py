import numpy as np
import pytest

from vortexlayers.geometry import circle
from vortexlayers.harness import ExperimentSpec

ACCEPTANCE_LINES = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def perturbed_density(s):
    return 1.0 + 0.1 * np.cos(2 * np.pi * s)


def flat(s):
    return np.zeros_like(s)


def poisson(q, s):
    th = 2 * np.pi * s
    return (1 - q * q) / (1 - 2 * q * np.cos(th) + q * q)


def poisson_conjugate(q, s):
    """Conjugate series sum_k q^k sin(k theta) of the Poisson density."""
    th = 2 * np.pi * s
    return q * np.sin(th) / (1 - 2 * q * np.cos(th) + q * q)


@pytest.fixture(scope="session")
def unit_circle():
    return circle()


@pytest.fixture(scope="session")
def perturbed_spec(unit_circle):
    return ExperimentSpec(unit_circle, flat, perturbed_density)


@pytest.fixture(scope="session")
def annulus_spec(unit_circle):
    return ExperimentSpec(unit_circle, flat, lambda s: np.ones_like(s))
