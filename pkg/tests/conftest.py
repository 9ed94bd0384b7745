import numpy as np
import pytest

from texavatar import synth
from texavatar.scene import (
    Joint,
    SkinnedTemplate,
    build_adjacency,
    make_skinning,
)

import acceptance_report

SMALL_CONFIG = synth.SceneConfig(
    seed=11,
    rings=10,
    segments=16,
    texture_resolution=64,
    image_size=160,
    num_condition_views=4,
    num_holdout_views=2,
    pointcloud_size=1200,
)


@pytest.fixture(scope="session")
def small_scene():
    """One small synthetic scene shared by the fast unit tests."""
    return synth.synth(SMALL_CONFIG)


def make_quad_template() -> SkinnedTemplate:
    """Unit quad in the xy-plane, full UV coverage, single root joint."""
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
    )
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    uv = vertices[:, :2]
    uv_coords = uv[triangles]
    idx, w = make_skinning([[(0, 1.0)]] * 4)
    t = SkinnedTemplate(
        vertices=vertices,
        triangles=triangles,
        uv_coords=uv_coords,
        joints=(Joint("root", -1, np.eye(4)),),
        skin_indices=idx,
        skin_weights=w,
    )
    return build_adjacency(t)


@pytest.fixture()
def quad_template():
    return make_quad_template()


def make_random_tube(rng: np.random.Generator) -> tuple:
    """Random small tube template + random motion, for property tests.

    Vertex counts stay well under 500.
    """
    cfg = synth.SceneConfig(
        seed=int(rng.integers(0, 2**31)),
        rings=int(rng.integers(5, 9)),
        segments=int(rng.integers(8, 13)),
        length=float(rng.uniform(0.5, 1.0)),
        radius=float(rng.uniform(0.08, 0.18)),
    )
    t = synth.build_body_template(cfg)
    deltas = {}
    for j in (1, 2):
        angle = float(rng.uniform(-30.0, 30.0))
        axis = rng.integers(0, 2)
        m = np.eye(4)
        c, s = np.cos(np.deg2rad(angle)), np.sin(np.deg2rad(angle))
        if axis == 0:
            m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
        else:
            m[0, 0], m[0, 2], m[2, 0], m[2, 2] = c, s, -s, c
        deltas[j] = m
    motion = synth.motion_from_locals(t, deltas)
    return cfg, t, motion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.LINES:
            terminalreporter.write_line(line)
