import numpy as np
import pytest

from rotisar.geometry import ArrayLayout, RotationParams, Scene, Trajectory
from rotisar.waveform import Pulse, Scenario

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def layout():
    return ArrayLayout.random(5, 200e3, 15e3, seed=3)


@pytest.fixture(scope="session")
def trajectory():
    return Trajectory([0.0, 0.0, 500e3], [7600.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def rotation():
    return RotationParams(3 * np.pi / 4, np.pi / 3, 2 * np.pi / 5)


@pytest.fixture(scope="session")
def small_scenario(layout, trajectory, rotation):
    pulse = Pulse(2.4e9, 311e6, 0.015, 20, sample_rate=8e9, window=16e-9, num_freqs=16)
    return Scenario(layout, trajectory, rotation, pulse)


@pytest.fixture(scope="session")
def two_point_scene():
    return Scene([[0.2, 0.1], [-0.15, 0.25]], [1.0, 0.7])
