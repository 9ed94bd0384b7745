"""Per-texel Gaussian parameter maps and their posing to world space.

Each valid texel carries one Gaussian parameterized by a canonical-space
displacement, spherical-harmonic color coefficients, log-scales, a rotation
quaternion, and an opacity. Posing applies the texel's blended LBS transform
to position and rotation, exponentiates scales, and multiplies in the
refining scale map when given; covariance is R S S^T R^T.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.spatial.transform import Rotation

from .scene import TexelMap

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
NORMAL_SCALE_FACTOR = 0.1  # thickness of a surface Gaussian along its normal


def sh_coeff_count(degree: int) -> int:
    if degree not in (0, 1, 2):
        raise ValueError("supported SH degrees are 0, 1, 2")
    return (degree + 1) ** 2


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values, (Q, (degree+1)^2), for unit directions (Q, 3)."""
    q = dirs.shape[0]
    out = np.empty((q, sh_coeff_count(degree)))
    out[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    return out


def decode_color(h: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Convert SH coefficients (K, 3) or (Q, K, 3) to RGB in [0, 1].

    The zero-coefficient color is mid-gray (0.5 offset convention).
    """
    single = h.ndim == 2
    hh = h[None] if single else h
    k = hh.shape[1]
    degree = int(round(np.sqrt(k))) - 1
    if sh_coeff_count(degree) != k:
        raise ValueError(f"SH coefficient count {k} does not match any degree")
    d = np.atleast_2d(view_dir).astype(np.float64)
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-30)
    if d.shape[0] == 1 and hh.shape[0] > 1:
        d = np.broadcast_to(d, (hh.shape[0], 3))
    basis = sh_basis(degree, d)  # (Q, K)
    rgb = 0.5 + np.einsum("qk,qkc->qc", basis, hh.astype(np.float64))
    rgb = np.clip(rgb, 0.0, 1.0)
    return rgb[0] if single else rgb


@dataclass(frozen=True)
class GaussianParamMap:
    """Texel-space Gaussian parameters plus the valid-Gaussian mask."""

    resolution: int
    sh_degree: int
    displacement: np.ndarray  # (R, R, 3) canonical-space offsets, meters
    sh: np.ndarray  # (R, R, 3 * (deg+1)^2)
    log_scale: np.ndarray  # (R, R, 3)
    rotation: np.ndarray  # (R, R, 4) quaternions (x, y, z, w)
    opacity: np.ndarray  # (R, R) in [0, 1]
    mask: np.ndarray  # (R, R) bool

    def __post_init__(self):
        qn = np.linalg.norm(self.rotation[self.mask], axis=-1)
        if qn.size and np.abs(qn - 1.0).max() > 1e-5:
            raise ValueError("quaternions must be unit-norm within 1e-5")
        op = self.opacity[self.mask]
        if op.size and (op.min() < 0.0 or op.max() > 1.0):
            raise ValueError("opacity must lie in [0, 1]")

    def to_texel_map(self) -> TexelMap:
        r = self.resolution
        layers = [
            self.displacement, self.sh, self.log_scale, self.rotation,
            self.opacity[:, :, None], self.mask.astype(np.float32)[:, :, None],
        ]
        data = np.concatenate([np.asarray(x, dtype=np.float32) for x in layers], axis=2)
        return TexelMap(r, data.shape[2], data, "gaussian_params")

    @staticmethod
    def from_texel_map(m: TexelMap) -> "GaussianParamMap":
        # channels = 3 + 3K + 3 + 4 + 1 + 1
        k3 = m.channels - 12
        degree = int(round(np.sqrt(k3 / 3))) - 1
        if 3 * sh_coeff_count(degree) != k3:
            raise ValueError(f"channel count {m.channels} has no valid SH layout")
        d = m.data
        return GaussianParamMap(
            resolution=m.resolution,
            sh_degree=degree,
            displacement=d[:, :, 0:3],
            sh=d[:, :, 3 : 3 + k3],
            log_scale=d[:, :, 3 + k3 : 6 + k3],
            rotation=d[:, :, 6 + k3 : 10 + k3],
            opacity=d[:, :, 10 + k3],
            mask=d[:, :, 11 + k3] > 0.5,
        )


@dataclass(frozen=True)
class GaussianSet:
    """Flat world-space Gaussians in deterministic texel (row-major) order."""

    positions: np.ndarray  # (M, 3)
    covariances: np.ndarray  # (M, 3, 3)
    sh: np.ndarray  # (M, K, 3)
    opacities: np.ndarray  # (M,)
    sh_degree: int

    def __len__(self) -> int:
        return int(self.positions.shape[0])


class AppearancePredictor(Protocol):
    def predict(self, fused_second: TexelMap, normal_map: TexelMap) -> GaussianParamMap: ...


def reference_appearance(
    fused_second: TexelMap,
    normal_map: TexelMap,
    coverage: TexelMap,
    deformed_position: TexelMap,
    deformed_normal: TexelMap,
    valid: np.ndarray,
    sh_degree: int = 0,
) -> GaussianParamMap:
    """Deterministic appearance stand-in.

    Degree-0 SH reproduces the fused texel color exactly; rotations align each
    Gaussian with the local tangent frame of the deformed canonical surface;
    tangent scales cover half the mean adjacent-texel surface distance with a
    thin normal axis; opacity is 1 where at least one view saw the texel.
    """
    r = fused_second.resolution
    for m in (normal_map, coverage, deformed_position, deformed_normal):
        if m.resolution != r:
            raise ValueError("input map resolutions must match")
    k = sh_coeff_count(sh_degree)
    sh = np.zeros((r, r, 3 * k), dtype=np.float32)
    color = fused_second.data[:, :, :3].astype(np.float64)
    sh[:, :, 0:3] = ((color - 0.5) / SH_C0).astype(np.float32)

    pos = deformed_position.data.astype(np.float64)
    nrm = deformed_normal.data.astype(np.float64)
    nlen = np.linalg.norm(nrm, axis=2, keepdims=True)
    nrm = np.where(nlen > 1e-12, nrm / np.maximum(nlen, 1e-30), 0.0)

    rows, cols = np.nonzero(valid)
    tangent, spacing = _texel_tangents_and_spacing(pos, valid, rows, cols)
    n = nrm[rows, cols]
    # project tangents into the surface plane, fall back to any orthogonal axis
    t_vec = tangent - (tangent * n).sum(axis=1, keepdims=True) * n
    tl = np.linalg.norm(t_vec, axis=1, keepdims=True)
    fallback = _any_orthogonal(n)
    t_vec = np.where(tl > 1e-9, t_vec / np.maximum(tl, 1e-30), fallback)
    b_vec = np.cross(n, t_vec)

    rotation = np.zeros((r, r, 4), dtype=np.float32)
    rotation[:, :, 3] = 1.0
    frames = np.stack([t_vec, b_vec, n], axis=2)  # columns = local axes in world
    quats = Rotation.from_matrix(frames).as_quat()
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    rotation[rows, cols] = quats.astype(np.float32)

    log_scale = np.zeros((r, r, 3), dtype=np.float32)
    half = 0.5 * spacing
    log_scale[rows, cols, 0] = np.log(half).astype(np.float32)
    log_scale[rows, cols, 1] = np.log(half).astype(np.float32)
    log_scale[rows, cols, 2] = np.log(NORMAL_SCALE_FACTOR * half).astype(np.float32)

    opacity = np.where(coverage.data[:, :, 0] > 0.0, 1.0, 0.0).astype(np.float32)
    opacity *= valid.astype(np.float32)

    return GaussianParamMap(
        resolution=r, sh_degree=sh_degree,
        displacement=np.zeros((r, r, 3), dtype=np.float32),
        sh=sh, log_scale=log_scale, rotation=rotation,
        opacity=opacity, mask=valid.copy(),
    )


def _texel_tangents_and_spacing(
    pos: np.ndarray, valid: np.ndarray, rows: np.ndarray, cols: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per covered texel: a surface tangent along the +u direction and the
    mean 3D distance to the valid 4-neighbors."""
    r = valid.shape[0]
    q = rows.size
    tangent = np.zeros((q, 3))
    dist_sum = np.zeros(q)
    dist_cnt = np.zeros(q)
    here = pos[rows, cols]
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        rr = rows + dr
        cc = cols + dc
        ok = (rr >= 0) & (rr < r) & (cc >= 0) & (cc < r)
        ok[ok] &= valid[rr[ok], cc[ok]]
        nb = np.zeros((q, 3))
        nb[ok] = pos[rr[ok], cc[ok]]
        diff = nb - here
        dist = np.linalg.norm(diff, axis=1)
        dist_sum += np.where(ok, dist, 0.0)
        dist_cnt += ok
        if dc != 0:
            tangent += np.where(ok[:, None], diff * dc, 0.0)
    spacing = np.where(dist_cnt > 0, dist_sum / np.maximum(dist_cnt, 1.0), 1e-3)
    spacing = np.maximum(spacing, 1e-6)
    return tangent, spacing


def _any_orthogonal(n: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to each row of n."""
    ref = np.where(
        np.abs(n[:, 0:1]) < 0.9,
        np.broadcast_to([1.0, 0.0, 0.0], n.shape),
        np.broadcast_to([0.0, 1.0, 0.0], n.shape),
    )
    v = np.cross(n, ref)
    return v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-30)


def gram_schmidt(mats: np.ndarray) -> np.ndarray:
    """Re-orthonormalize (M, 3, 3) linear parts: columns via Gram-Schmidt,
    third column from the cross product to keep det +1."""
    c0 = mats[:, :, 0]
    c0 = c0 / np.maximum(np.linalg.norm(c0, axis=1, keepdims=True), 1e-30)
    c1 = mats[:, :, 1]
    c1 = c1 - (c1 * c0).sum(axis=1, keepdims=True) * c0
    c1 = c1 / np.maximum(np.linalg.norm(c1, axis=1, keepdims=True), 1e-30)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=2)


def pose_gaussians(
    params: GaussianParamMap,
    lbs_map: TexelMap,
    deformed_geometry: TexelMap,
    scale_ratio: TexelMap | None = None,
) -> GaussianSet:
    """Pose texel Gaussians into world space.

    p = A (d + x_deformed) with A the texel's blended LBS transform; rotation
    composes the Gram-Schmidt-orthonormalized linear part of A with the texel
    quaternion; scale = exp(log_scale) times the broadcast refining scale.
    """
    r = params.resolution
    if lbs_map.resolution != r or deformed_geometry.resolution != r:
        raise ValueError("map resolutions must match")
    emit = params.mask & (params.opacity > 0.0)
    rows, cols = np.nonzero(emit)

    if scale_ratio is not None:
        if scale_ratio.resolution != r:
            raise ValueError("scale ratio resolution mismatch")
        sr = scale_ratio.data[rows, cols, 0].astype(np.float64)
        if sr.size and sr.min() < 1.0:
            raise ValueError("refining scale map must be >= 1 on valid texels")
    else:
        sr = None

    a = lbs_map.data[rows, cols].astype(np.float64).reshape(-1, 3, 4)
    x = deformed_geometry.data[rows, cols].astype(np.float64)
    d = params.displacement[rows, cols].astype(np.float64)
    p = np.einsum("mij,mj->mi", a[:, :, :3], x + d) + a[:, :, 3]

    quats = params.rotation[rows, cols].astype(np.float64)
    qn = np.linalg.norm(quats, axis=1)
    if quats.size and qn.min() < 1e-6:
        raise ValueError("invalid quaternion with near-zero norm")
    quats = quats / qn[:, None]
    r_lbs = gram_schmidt(a[:, :, :3])
    r_param = Rotation.from_quat(quats).as_matrix()
    r_total = r_lbs @ r_param

    scale = np.exp(params.log_scale[rows, cols].astype(np.float64))
    if sr is not None:
        scale = scale * sr[:, None]
    rs = r_total * scale[:, None, :]  # R @ diag(s)
    cov = rs @ rs.transpose(0, 2, 1)

    k = sh_coeff_count(params.sh_degree)
    sh = params.sh[rows, cols].astype(np.float64).reshape(-1, k, 3)
    alpha = params.opacity[rows, cols].astype(np.float64)
    return GaussianSet(
        positions=p, covariances=cov, sh=sh, opacities=alpha,
        sh_degree=params.sh_degree,
    )
