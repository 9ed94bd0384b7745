import numpy as np
import pytest

from texavatar.scene import (
    Camera,
    Joint,
    MotionFrame,
    SkinnedTemplate,
    TexelMap,
    build_adjacency,
    invert_rigid,
    make_skinning,
    validate_camera,
    validate_motion,
    validate_template,
)

from conftest import make_quad_template


def random_rigid(rng):
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    m = np.eye(4)
    m[:3, :3] = q
    m[:3, 3] = rng.normal(size=3)
    return m


def test_invert_rigid_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = random_rigid(rng)
        assert np.abs(invert_rigid(m) @ m - np.eye(4)).max() < 1e-12
        assert np.abs(m @ invert_rigid(m) - np.eye(4)).max() < 1e-12


def test_validate_template_clean():
    t = make_quad_template()
    assert validate_template(t) == []


def test_validate_template_catches_violations():
    t = make_quad_template()
    bad_tris = t.triangles.copy()
    bad_tris[0, 0] = 9
    t2 = SkinnedTemplate(
        vertices=t.vertices, triangles=bad_tris, uv_coords=t.uv_coords,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    assert any("out of range" in v for v in validate_template(t2))

    degen = t.triangles.copy()
    degen[1] = [0, 0, 2]
    t3 = SkinnedTemplate(
        vertices=t.vertices, triangles=degen, uv_coords=t.uv_coords,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    assert any("degenerate" in v for v in validate_template(t3))

    bad_uv = t.uv_coords.copy()
    bad_uv[0, 0] = [1.5, 0.0]
    t4 = SkinnedTemplate(
        vertices=t.vertices, triangles=t.triangles, uv_coords=bad_uv,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    assert any("UV" in v for v in validate_template(t4))

    bad_w = t.skin_weights.copy()
    bad_w[0] = 0.5
    t5 = SkinnedTemplate(
        vertices=t.vertices, triangles=t.triangles, uv_coords=t.uv_coords,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=bad_w,
    )
    assert any("sum" in v for v in validate_template(t5))

    bad_joint = (Joint("root", 0, np.eye(4)),)  # self-parent
    t6 = SkinnedTemplate(
        vertices=t.vertices, triangles=t.triangles, uv_coords=t.uv_coords,
        joints=bad_joint, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    assert any("parent" in v for v in validate_template(t6))


def test_build_adjacency_quad():
    t = make_quad_template()
    edges = {tuple(e) for e in t.edges.tolist()}
    assert edges == {(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)}
    # symmetry
    for i, nbrs in enumerate(t.vertex_neighbors):
        for j in nbrs:
            assert i in t.vertex_neighbors[int(j)]
    # vertex_edges index incident edges
    for v in range(4):
        for e in t.vertex_edges[v]:
            assert v in t.edges[int(e)]


def test_build_adjacency_rejects_degenerate():
    t = make_quad_template()
    tris = t.triangles.copy()
    tris[0] = [1, 1, 2]
    bad = SkinnedTemplate(
        vertices=t.vertices, triangles=tris, uv_coords=t.uv_coords,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    with pytest.raises(ValueError, match="degenerate"):
        build_adjacency(bad)


def test_make_skinning_renormalizes_and_caps():
    idx, w = make_skinning([[(0, 2.0), (1, 2.0)]])
    assert np.allclose(w.sum(axis=1), 1.0)
    assert np.allclose(w[0], [0.5, 0.5])

    many = [[(j, 1.0) for j in range(12)]]
    idx, w = make_skinning(many)
    assert idx.shape[1] == 8
    assert abs(w.sum() - 1.0) < 1e-12

    with pytest.raises(ValueError, match="non-positive"):
        make_skinning([[(0, 0.0)]])


def test_texel_map_validation():
    m = TexelMap.zeros(4, 3, "color")
    assert m.data.shape == (4, 4, 3)
    with pytest.raises(ValueError, match="unknown texel map kind"):
        TexelMap(4, 3, np.zeros((4, 4, 3), np.float32), "bogus")
    with pytest.raises(ValueError, match="does not match"):
        TexelMap(4, 3, np.zeros((4, 4, 2), np.float32), "color")


def test_vertex_uv_first_corner_wins():
    t = make_quad_template()
    uv_coords = t.uv_coords.copy()
    # give vertex 0 a different UV in the second face; the first stays canonical
    uv_coords[1, 0] = [0.25, 0.25]
    t2 = SkinnedTemplate(
        vertices=t.vertices, triangles=t.triangles, uv_coords=uv_coords,
        joints=t.joints, skin_indices=t.skin_indices, skin_weights=t.skin_weights,
    )
    assert np.array_equal(t2.vertex_uv[0], t.uv_coords[0, 0])


def test_validate_motion_and_camera():
    t = make_quad_template()
    good = MotionFrame(joint_transforms=np.eye(4)[None])
    assert validate_motion(t, good) == []
    bad = MotionFrame(joint_transforms=np.stack([np.eye(4)] * 2))
    assert validate_motion(t, bad)
    skewed = np.eye(4)
    skewed[0, 1] = 0.5
    assert validate_motion(t, MotionFrame(joint_transforms=skewed[None]))

    intr = np.array([[100.0, 0, 32], [0, 100.0, 32], [0, 0, 1]])
    cam = Camera(intrinsics=intr, extrinsics=np.eye(4), width=64, height=64)
    assert validate_camera(cam) == []
    assert np.allclose(cam.center, 0.0)
    bad_intr = intr.copy()
    bad_intr[0, 0] = -1.0
    assert validate_camera(Camera(bad_intr, np.eye(4), 64, 64))
