import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bigrasp.geometry import GraspPose, box_mesh, frame_from_axes, icosphere  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cube4():
    """4 cm cube centered at the origin."""
    return box_mesh((0.04, 0.04, 0.04))


@pytest.fixture(scope="session")
def sphere3():
    """3 cm diameter sphere."""
    return icosphere(0.015, subdivisions=3)


def centered_grasp(closing, approach, width=0.08, center=(0.0, 0.0, 0.0), jaw_depth=0.03):
    """Pose whose closing line passes through ``center``."""
    R = frame_from_axes(closing, approach)
    return GraspPose(R, np.asarray(center) - jaw_depth * R[:, 2], width)


# one line per acceptance criterion, filled in by test_acceptance and printed after the run
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
