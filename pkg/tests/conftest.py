import numpy as np
import pytest

from fellerlab.core import RngStream
from fellerlab.models import FiniteChainModel, HeatModel, RotationTailModel, SlideModel


@pytest.fixture
def rng():
    return RngStream(20240611)


@pytest.fixture(scope="session")
def heat():
    return HeatModel(N=256)


@pytest.fixture
def small_heat():
    return HeatModel(N=16)


@pytest.fixture
def rotation():
    return RotationTailModel()


@pytest.fixture
def slide():
    return SlideModel("rho")


@pytest.fixture
def slide_d():
    return SlideModel("d")


@pytest.fixture
def swap():
    return FiniteChainModel([[0.0, 1.0], [1.0, 0.0]])


def random_stochastic(n, gen, positive=True):
    P = gen.random((n, n)) + (0.05 if positive else 0.0)
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(n), np.argmax(P, axis=1)] += 1.0 - P.sum(axis=1)
    return P


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
