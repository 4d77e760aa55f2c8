import math

import numpy as np
import pytest

from packsim.geom import CuboidModel, Face, Pose
from packsim.pipeline import SceneConfig
from packsim.world import ObjectState, WorldParams, WorldState, stable_rotation

SOAP = (0.09, 0.06, 0.03)


@pytest.fixture(scope="session")
def soap():
    return CuboidModel.from_dims(SOAP)


def resting_pose(model, x, y, face=Face.PZ, yaw=0.0, bottom=None):
    """Pose of ``model`` standing on ``face``'s opposite at (x, y) with the given yaw."""
    face = Face(face)
    z0 = 0.0 if bottom is None else bottom
    return Pose.from_matrix(stable_rotation(face, yaw), (x, y, z0 + model.dims[face.axis] / 2))


def make_world(model, placements, seed=0, params=None):
    """World with the default bins and objects at ``placements`` (list of poses)."""
    sc = SceneConfig()
    objs = [ObjectState(i, p) for i, p in enumerate(placements)]
    return WorldState(model, sc.source, sc.goal, objs, np.random.default_rng(seed), sc.reachable,
                      params or WorldParams())


def goal_xy(dx=0.0, dy=0.0):
    c = SceneConfig().goal.pose.position
    return c[0] + dx, c[1] + dy


def source_xy(dx=0.0, dy=0.0):
    c = SceneConfig().source.pose.position
    return c[0] + dx, c[1] + dy


def floor(bin_):
    return bin_.floor_z


DEG = math.pi / 180


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
