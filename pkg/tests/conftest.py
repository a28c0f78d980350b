import numpy as np
import pytest
from hypothesis import settings

from videoguide.geometry import CameraModel, Pose6D, TriMesh
from videoguide.sim import ObjectSpec, SceneConfig

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def small_camera(size=128, f=100.0):
    return CameraModel(f, f, size / 2, size / 2, size, size)


def cube_scene(distance=2.0, size=1.0, gravity=(0.0, 0.0, 0.0), camera=None, extra=()):
    """A cube actuator on the optical axis of an identity camera; also the target."""
    cube = ObjectSpec(1, "cube", TriMesh.box([size] * 3), Pose6D([0.0, 0.0, distance]), actuator=True, target=True)
    return SceneConfig((cube, *extra), camera or small_camera(), gravity)


@pytest.fixture
def cam():
    return small_camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
