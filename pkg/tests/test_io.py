import numpy as np
import pytest

from texavatar import io as tio
from texavatar import synth
from texavatar.scene import CameraRig, TexelMap

from conftest import make_quad_template


def test_template_round_trip(tmp_path):
    t = synth.build_body_template(synth.SceneConfig(rings=6, segments=8))
    tio.save_template(tmp_path / "m.obj", tmp_path / "m.json", t)
    back = tio.load_template(tmp_path / "m.obj", tmp_path / "m.json")
    assert np.abs(back.vertices - t.vertices).max() < 1e-7
    assert np.array_equal(back.triangles, t.triangles)
    assert np.abs(back.uv_coords - t.uv_coords).max() < 1e-8
    assert len(back.joints) == len(t.joints)
    for a, b in zip(back.joints, t.joints):
        assert a.name == b.name and a.parent == b.parent
        assert np.abs(a.canonical - b.canonical).max() < 1e-12
    # skinning preserved up to float text precision
    w0 = np.zeros((t.num_vertices, len(t.joints)))
    w1 = np.zeros_like(w0)
    for v in range(t.num_vertices):
        for j, w in zip(t.skin_indices[v], t.skin_weights[v]):
            w0[v, int(j)] += w
        for j, w in zip(back.skin_indices[v], back.skin_weights[v]):
            w1[v, int(j)] += w
    assert np.abs(w0 - w1).max() < 1e-9


def test_obj_requires_triangles(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n")
    with pytest.raises(ValueError, match="triangle"):
        tio.load_obj(p)


def test_motion_round_trip(tmp_path):
    t = synth.build_body_template(synth.SceneConfig(rings=6, segments=8))
    frames = synth.build_motions(t, synth.SceneConfig(rings=6, segments=8))
    tio.save_motion(tmp_path / "motion.json", frames)
    back = tio.load_motion(tmp_path / "motion.json")
    assert len(back) == len(frames)
    for a, b in zip(back, frames):
        assert np.abs(a.joint_transforms - b.joint_transforms).max() < 1e-15


def test_rig_round_trip(tmp_path):
    rig, _ = synth.build_rigs(synth.SceneConfig())
    tio.save_rig(tmp_path / "rig.json", rig)
    back = tio.load_rig(tmp_path / "rig.json")
    assert isinstance(back, CameraRig) and len(back) == len(rig)
    for a, b in zip(back.cameras, rig.cameras):
        assert np.abs(a.intrinsics - b.intrinsics).max() < 1e-15
        assert np.abs(a.extrinsics - b.extrinsics).max() < 1e-15
        assert (a.width, a.height) == (b.width, b.height)


def test_dutf_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    m = TexelMap(8, 5, rng.normal(size=(8, 8, 5)).astype(np.float32), "deformation")
    tio.save_dutf(tmp_path / "m.dutf", m)
    back = tio.load_dutf(tmp_path / "m.dutf")
    assert back.kind == "deformation"
    assert np.array_equal(back.data, m.data)
    with pytest.raises(ValueError, match="not a DUTF"):
        p = tmp_path / "x.dutf"
        p.write_bytes(b"NOPE" + bytes(16))
        tio.load_dutf(p)


def test_png_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((12, 10, 3))
    tio.save_png(tmp_path / "a.png", img)
    back = tio.load_png(tmp_path / "a.png")
    assert back.shape == (12, 10, 3)
    assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-6
    # single channel path
    tio.save_png(tmp_path / "m.png", rng.random((6, 6)))
    assert tio.load_png(tmp_path / "m.png").shape == (6, 6)


def test_gaussian_set_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    n = 17
    p = rng.normal(size=(n, 3))
    a = rng.normal(size=(n, 3, 3))
    cov = a @ a.transpose(0, 2, 1)
    rgb = rng.random((n, 3))
    alpha = rng.random(n)
    tio.save_gaussian_set(tmp_path / "g.bin", p, cov, rgb, alpha)
    p2, cov2, rgb2, a2 = tio.load_gaussian_set(tmp_path / "g.bin")
    assert np.abs(p2 - p).max() < 1e-6
    assert np.abs(cov2 - cov).max() < 1e-5
    assert np.abs(cov2 - cov2.transpose(0, 2, 1)).max() == 0.0
    assert np.abs(rgb2 - rgb).max() < 1e-6
    assert np.abs(a2 - alpha).max() < 1e-6


def test_quad_template_obj_round_trip(tmp_path):
    t = make_quad_template()
    tio.save_template(tmp_path / "q.obj", tmp_path / "q.json", t)
    back = tio.load_template(tmp_path / "q.obj", tmp_path / "q.json")
    assert np.array_equal(back.triangles, t.triangles)
