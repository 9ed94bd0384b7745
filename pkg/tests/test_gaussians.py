import numpy as np
import pytest

from texavatar.gaussians import (
    SH_C0,
    GaussianParamMap,
    decode_color,
    gram_schmidt,
    pose_gaussians,
    reference_appearance,
    sh_basis,
    sh_coeff_count,
)
from texavatar.scene import TexelMap


def make_param_map(r=4, sh_degree=0, rng=None):
    rng = rng or np.random.default_rng(0)
    k = sh_coeff_count(sh_degree)
    rot = np.zeros((r, r, 4), np.float32)
    rot[:, :, 3] = 1.0
    return GaussianParamMap(
        resolution=r,
        sh_degree=sh_degree,
        displacement=rng.normal(scale=0.01, size=(r, r, 3)).astype(np.float32),
        sh=rng.normal(scale=0.1, size=(r, r, 3 * k)).astype(np.float32),
        log_scale=np.full((r, r, 3), np.log(0.01), np.float32),
        rotation=rot,
        opacity=np.full((r, r), 0.8, np.float32),
        mask=np.ones((r, r), bool),
    )


def geometry_maps(params, offset=0.0):
    r = params.resolution
    lbs = np.zeros((r, r, 12), np.float32)
    eye = np.eye(3, 4)
    lbs[:, :] = eye.reshape(-1)
    lbs[:, :, 3] = offset  # x-translation column
    pos = np.zeros((r, r, 3), np.float32)
    pos[:, :, 0] = np.arange(r, dtype=np.float32)[None, :]
    return (
        TexelMap(r, 12, lbs, "lbs_transform"),
        TexelMap(r, 3, pos, "position"),
    )


def test_sh_degree0_decode_round_trip():
    color = np.array([0.3, 0.6, 0.9])
    h = ((color - 0.5) / SH_C0)[None, :]
    out = decode_color(h, np.array([0.0, 0.0, 1.0]))
    assert np.abs(out - color).max() < 1e-12


def test_sh_basis_shapes_and_validation():
    dirs = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert sh_basis(0, dirs).shape == (2, 1)
    assert sh_basis(1, dirs).shape == (2, 4)
    assert sh_basis(2, dirs).shape == (2, 9)
    with pytest.raises(ValueError):
        sh_coeff_count(3)
    with pytest.raises(ValueError, match="does not match"):
        decode_color(np.zeros((2, 3)), np.array([0, 0, 1.0]))


def test_decode_color_clipped():
    h = np.full((1, 3), 10.0)
    assert np.all(decode_color(h, np.array([0.0, 0.0, 1.0])) == 1.0)


def test_param_map_texel_round_trip():
    p = make_param_map()
    m = p.to_texel_map()
    assert m.kind == "gaussian_params"
    q = GaussianParamMap.from_texel_map(m)
    assert q.sh_degree == p.sh_degree
    for name in ("displacement", "sh", "log_scale", "rotation"):
        assert np.array_equal(getattr(p, name), getattr(q, name))
    assert np.array_equal(p.opacity, q.opacity)
    assert np.array_equal(p.mask, q.mask)


def test_param_map_validation():
    p = make_param_map()
    bad_rot = p.rotation.copy()
    bad_rot[0, 0] = [1, 1, 1, 1]
    with pytest.raises(ValueError, match="unit-norm"):
        GaussianParamMap(
            resolution=p.resolution, sh_degree=0, displacement=p.displacement,
            sh=p.sh, log_scale=p.log_scale, rotation=bad_rot,
            opacity=p.opacity, mask=p.mask,
        )
    bad_op = p.opacity.copy()
    bad_op[0, 0] = 1.5
    with pytest.raises(ValueError, match="opacity"):
        GaussianParamMap(
            resolution=p.resolution, sh_degree=0, displacement=p.displacement,
            sh=p.sh, log_scale=p.log_scale, rotation=p.rotation,
            opacity=bad_op, mask=p.mask,
        )


def test_gram_schmidt_orthonormal_right_handed():
    rng = np.random.default_rng(1)
    mats = rng.normal(size=(20, 3, 3))
    q = gram_schmidt(mats)
    eye = np.einsum("mji,mjk->mik", q, q)  # Q^T Q
    assert np.abs(eye - np.eye(3)).max() < 1e-10
    assert np.abs(np.linalg.det(q) - 1.0).max() < 1e-10


def test_pose_gaussians_identity_lbs():
    p = make_param_map()
    lbs, pos = geometry_maps(p)
    g = pose_gaussians(p, lbs, pos)
    assert len(g) == p.resolution**2
    rows, cols = np.nonzero(p.mask & (p.opacity > 0))
    expected = pos.data[rows, cols].astype(np.float64) + p.displacement[rows, cols]
    assert np.abs(g.positions - expected).max() < 1e-7
    # covariance eigenvalues are the squared scales
    s2 = np.exp(2 * p.log_scale[0, 0].astype(np.float64))
    eig = np.sort(np.linalg.eigvalsh(g.covariances[0]))
    assert np.abs(eig - np.sort(s2)).max() < 1e-12


def test_pose_gaussians_translation():
    p = make_param_map()
    lbs, pos = geometry_maps(p, offset=2.5)
    g = pose_gaussians(p, lbs, pos)
    g0 = pose_gaussians(p, geometry_maps(p)[0], pos)
    assert np.abs((g.positions - g0.positions) - [2.5, 0.0, 0.0]).max() < 1e-12


def test_pose_gaussians_scale_refinement_grows_covariance():
    p = make_param_map()
    lbs, pos = geometry_maps(p)
    ratio = TexelMap(p.resolution, 1,
                     np.full((p.resolution, p.resolution, 1), 2.0, np.float32),
                     "scale_ratio")
    g = pose_gaussians(p, lbs, pos, ratio)
    g0 = pose_gaussians(p, lbs, pos)
    assert np.abs(g.covariances - 4.0 * g0.covariances).max() < 1e-15

    ones = TexelMap(p.resolution, 1,
                    np.ones((p.resolution, p.resolution, 1), np.float32),
                    "scale_ratio")
    g1 = pose_gaussians(p, lbs, pos, ones)
    assert np.array_equal(g1.covariances, g0.covariances)
    assert np.array_equal(g1.positions, g0.positions)

    shrink = TexelMap(p.resolution, 1,
                      np.full((p.resolution, p.resolution, 1), 0.5, np.float32),
                      "scale_ratio")
    with pytest.raises(ValueError, match=">= 1"):
        pose_gaussians(p, lbs, pos, shrink)


def test_reference_appearance_color_and_opacity():
    r = 6
    rng = np.random.default_rng(2)
    fused = TexelMap(r, 3, rng.random((r, r, 3)).astype(np.float32), "color")
    yy, xx = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    pos = np.stack([xx * 0.01, yy * 0.01, np.zeros_like(xx)], axis=2).astype(np.float32)
    nrm = np.zeros((r, r, 3), np.float32)
    nrm[:, :, 2] = 1.0
    cov = np.zeros((r, r, 1), np.float32)
    cov[: r // 2] = 2.0  # top half covered
    valid = np.ones((r, r), bool)
    params = reference_appearance(
        fused, TexelMap(r, 3, nrm, "normal"), TexelMap(r, 1, cov, "visibility"),
        TexelMap(r, 3, pos, "position"), TexelMap(r, 3, nrm, "normal"), valid,
    )
    # degree-0 SH reproduces the fused color exactly at decode time
    decoded = 0.5 + params.sh[:, :, :3].astype(np.float64) * SH_C0
    assert np.abs(decoded - fused.data).max() < 1e-6
    # opacity 1 exactly where covered, 0 elsewhere
    assert np.all(params.opacity[: r // 2] == 1.0)
    assert np.all(params.opacity[r // 2 :] == 0.0)
    # quaternions unit, z-axis of the frame equals the normal
    from scipy.spatial.transform import Rotation

    mats = Rotation.from_quat(params.rotation.reshape(-1, 4)).as_matrix()
    assert np.abs(mats[:, :, 2] - [0, 0, 1]).max() < 1e-6
    # tangent scales are half the texel spacing (0.01), normal axis thinner
    s = np.exp(params.log_scale[2, 2].astype(np.float64))
    assert abs(s[0] - 0.005) < 1e-7
    assert abs(s[2] - 0.0005) < 1e-8
