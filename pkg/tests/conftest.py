import numpy as np
import pytest

from pmlhp.pml import MediumSpec, PmlSetup, ScalingFunction


@pytest.fixture
def setup():
    return PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 1.5)


@pytest.fixture
def homogeneous():
    return MediumSpec.homogeneous(0.5)


@pytest.fixture
def bump():
    return MediumSpec.radial_bump(0.5, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
