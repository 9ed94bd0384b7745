"""Multi-view texture unprojection with per-view visibility reasoning.

Per view, a texel is visible when three tests all pass:
  angle  -- cos(-ray, surface facet normal) > delta, ray = surface point - camera center;
  depth  -- |image depth sampled at the texel's pixel - texel depth| < epsilon;
  mask   -- the segmentation sampled at the texel's pixel is foreground (> 0.5).
Bilinear samples near the silhouette renormalize over the usable taps only:
the depth sample ignores empty (infinite-depth) pixels, so texels projecting
within a pixel of the silhouette are not rejected by a meaningless
interpolated depth. The color sample weights each tap by the foreground mask
and by per-tap depth consistency, so it blends in neither background nor
pixels from across an occlusion fold. Views are fused as an unweighted mean
over visible views (zero where no view sees the texel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import raster
from .kinematics import lbs_transforms, pose_vertices
from .scene import Camera, CameraRig, MotionFrame, SkinnedTemplate, TexelMap

DEFAULT_ANGLE_THRESHOLD = 0.17  # cosine threshold (delta)
DEFAULT_DEPTH_THRESHOLD = 0.02  # meters (epsilon)


def _weighted_bilinear(
    data: np.ndarray, weight: np.ndarray, xy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sample of (H, W, C) ``data`` at (Q, 2) pixel coordinates where
    each tap's bilinear weight is multiplied by the per-pixel ``weight`` and the
    result is renormalized (integer-center convention, border clamped).

    Returns (values (Q, C), weight sums (Q,)); values are 0 where the combined
    weight is 0.
    """
    h, w = data.shape[:2]
    x = np.asarray(xy)[:, 0]
    y = np.asarray(xy)[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    num = np.zeros((x.shape[0], data.shape[2]))
    den = np.zeros(x.shape[0])
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yy = np.clip(y0 + dy, 0, h - 1)
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xx = np.clip(x0 + dx, 0, w - 1)
            tap = wy * wx * weight[yy, xx]
            num += tap[:, None] * data[yy, xx]
            den += tap
    values = np.where(den[:, None] > 0.0, num / np.maximum(den, 1e-300)[:, None], 0.0)
    return values, den


def _gated_bilinear(
    image: np.ndarray,
    image_mask: np.ndarray,
    image_depth: np.ndarray,
    xy: np.ndarray,
    expected_depth: np.ndarray,
    epsilon: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Foreground- and depth-consistency-weighted bilinear color sample.

    Each tap's bilinear weight is multiplied by the foreground mask and zeroed
    when the pixel's depth disagrees with the per-sample ``expected_depth`` by
    ``epsilon`` or more, so the sample blends in neither background nor pixels
    from across an occlusion fold. Returns (values (Q, C), weight sums (Q,));
    values are 0 where the combined weight is 0.
    """
    h, w = image.shape[:2]
    x = np.asarray(xy)[:, 0]
    y = np.asarray(xy)[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    num = np.zeros((x.shape[0], image.shape[2]))
    den = np.zeros(x.shape[0])
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yy = np.clip(y0 + dy, 0, h - 1)
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xx = np.clip(x0 + dx, 0, w - 1)
            d = image_depth[yy, xx]
            consistent = np.isfinite(d) & (
                np.abs(np.where(np.isfinite(d), d, 0.0) - expected_depth) < epsilon
            )
            tap = wy * wx * image_mask[yy, xx] * consistent
            num += tap[:, None] * image[yy, xx]
            den += tap
    values = np.where(den[:, None] > 0.0, num / np.maximum(den, 1e-300)[:, None], 0.0)
    return values, den


@dataclass(frozen=True)
class VisibilityInputs:
    """Everything visibility needs for one view."""

    position: TexelMap  # T_P, world-space texel positions
    face_normal: TexelMap  # T_N, facet normals
    texel_xy: np.ndarray  # (R, R, 2) image coordinates of each texel (T_xy)
    texel_depth: np.ndarray  # (R, R) camera depth of each texel (T_D)
    image_depth: np.ndarray  # (H, W) image-space depth (I_D), inf where empty
    image_mask: np.ndarray  # (H, W) segmentation (I_M)
    camera: Camera
    valid: np.ndarray  # (R, R) bool atlas mask M_G


@dataclass(frozen=True)
class UnprojectionResult:
    fused: TexelMap  # T_c
    per_view_visibility: list[TexelMap]
    per_view_partial: list[TexelMap]
    coverage_count: TexelMap  # sum of visibilities


def texel_view_maps(position: TexelMap, cam: Camera, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project the texel position map into one view: (T_xy, T_D)."""
    r = position.resolution
    pts = position.data.reshape(-1, 3).astype(np.float64)
    xy, z = raster.project_points(pts, cam)
    xy = xy.reshape(r, r, 2)
    z = z.reshape(r, r)
    xy[~valid] = 0.0
    z[~valid] = 0.0
    return xy, z


def visibility_map(v: VisibilityInputs, delta: float = DEFAULT_ANGLE_THRESHOLD,
                   epsilon: float = DEFAULT_DEPTH_THRESHOLD) -> TexelMap:
    """Binary per-view visibility: angle AND depth AND mask tests."""
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    r = v.position.resolution
    if v.face_normal.resolution != r:
        raise ValueError("texel map resolution mismatch")
    cam = v.camera
    if v.image_depth.shape != (cam.height, cam.width):
        raise ValueError("image depth buffer does not match camera dimensions")

    pos = v.position.data.astype(np.float64)
    ray = pos - cam.center  # T_ray
    ray_len = np.linalg.norm(ray, axis=2)
    ray_unit = ray / np.maximum(ray_len, 1e-30)[..., None]
    normal = v.face_normal.data.astype(np.float64)
    cos_angle = -(ray_unit * normal).sum(axis=2)
    vis_angle = cos_angle > delta

    xy_flat = v.texel_xy.reshape(-1, 2)
    finite = np.isfinite(v.image_depth)
    depth_img = np.where(finite, v.image_depth, 0.0)
    sampled_depth, depth_weight = _weighted_bilinear(
        depth_img[:, :, None], finite.astype(np.float64), xy_flat
    )
    sampled_depth = sampled_depth[:, 0].reshape(r, r)
    has_depth = (depth_weight > 0.0).reshape(r, r)
    vis_depth = has_depth & (np.abs(sampled_depth - v.texel_depth) < epsilon)

    mask_img = np.asarray(v.image_mask, dtype=np.float64)
    sampled_mask = raster.sample_bilinear(mask_img[:, :, None], xy_flat)[:, 0].reshape(r, r)
    # out-of-frame texels sample clamped border values; reject them explicitly
    in_frame = (
        (v.texel_xy[..., 0] >= 0.0) & (v.texel_xy[..., 0] <= cam.width - 1)
        & (v.texel_xy[..., 1] >= 0.0) & (v.texel_xy[..., 1] <= cam.height - 1)
    )
    vis_mask = (sampled_mask >= 0.5) & in_frame

    vis = (vis_angle & vis_depth & vis_mask & v.valid).astype(np.float32)
    return TexelMap(r, 1, vis[:, :, None], "visibility")


def partial_texture(
    image: np.ndarray,
    texel_xy: np.ndarray,
    valid: np.ndarray,
    mask: np.ndarray | None = None,
    image_depth: np.ndarray | None = None,
    texel_depth: np.ndarray | None = None,
    epsilon: float = DEFAULT_DEPTH_THRESHOLD,
) -> TexelMap:
    """Per-texel bilinear sample of one view image at T_xy; zero outside M_G.

    With a segmentation ``mask`` the sample is foreground-weighted, so texels
    projecting next to the silhouette do not blend in background color. With
    ``image_depth`` and ``texel_depth`` the taps are additionally gated by
    depth consistency (within ``epsilon``), so pixels from across an occlusion
    fold do not bleed in either; where that leaves no usable tap, the sample
    falls back to the foreground-weighted value.
    """
    r = texel_xy.shape[0]
    xy_flat = texel_xy.reshape(-1, 2)
    data = np.asarray(image, dtype=np.float64)
    if mask is None:
        colors = raster.sample_bilinear(data, xy_flat)
    else:
        weight = np.asarray(mask, dtype=np.float64)
        colors, den = _weighted_bilinear(data, weight, xy_flat)
        if image_depth is not None and texel_depth is not None:
            gated, gated_den = _gated_bilinear(
                data, weight, np.asarray(image_depth, dtype=np.float64),
                xy_flat, texel_depth.reshape(-1), epsilon,
            )
            colors = np.where(gated_den[:, None] > 0.0, gated, colors)
    colors = colors.reshape(r, r, -1)
    colors[~valid] = 0.0
    return TexelMap(r, colors.shape[2], colors.astype(np.float32), "color")


def fuse_views(partials: list[TexelMap], visibilities: list[TexelMap]) -> UnprojectionResult:
    """Mean of visible partial textures; exactly zero where nothing is visible.

    Summation runs in ascending view order so the result is bit-stable.
    """
    if len(partials) != len(visibilities):
        raise ValueError("partials and visibilities must have equal counts")
    if not partials:
        raise ValueError("fuse_views requires at least one view")
    r = partials[0].resolution
    c = partials[0].channels
    num = np.zeros((r, r, c))
    den = np.zeros((r, r, 1))
    for part, vis in zip(partials, visibilities):
        if part.resolution != r or vis.resolution != r:
            raise ValueError("view resolution mismatch")
        num += part.data.astype(np.float64) * vis.data.astype(np.float64)
        den += vis.data.astype(np.float64)
    fused = np.where(den > 0.0, num / np.maximum(den, 1.0), 0.0)
    return UnprojectionResult(
        fused=TexelMap(r, c, fused.astype(np.float32), "color"),
        per_view_visibility=list(visibilities),
        per_view_partial=list(partials),
        coverage_count=TexelMap(r, 1, den.astype(np.float32), "visibility"),
    )


def unproject(
    t: SkinnedTemplate,
    m: MotionFrame,
    d: TexelMap | None,
    rig: CameraRig,
    images: list[np.ndarray],
    masks: list[np.ndarray],
    resolution: int,
    delta: float = DEFAULT_ANGLE_THRESHOLD,
    epsilon: float = DEFAULT_DEPTH_THRESHOLD,
    chart: raster.TexelChart | None = None,
) -> UnprojectionResult:
    """Full single/double-stage unprojection for one frame.

    With d=None this is the first unprojection (on the undeformed posed
    template); with d given it is the second (on the deformed posed template).
    The image-space depth maps are rendered from the same geometry the texels
    come from, so the depth test detects self-occlusion.
    """
    if len(rig) < 1:
        raise ValueError("camera rig must contain at least one view")
    if len(images) != len(rig) or len(masks) != len(rig):
        raise ValueError("images/masks count must match camera count")
    if chart is None:
        chart = raster.get_texel_chart(t, resolution)
    world = pose_vertices(t, m, d)
    geo = raster.rasterize_texel_geometry(
        t, world, chart, attributes=("position", "face_normal", "mask")
    )
    valid = chart.mask
    partials: list[TexelMap] = []
    visibilities: list[TexelMap] = []
    for i, cam in enumerate(rig.cameras):
        depth_buf = raster.rasterize_image(t, world, cam).depth
        texel_xy, texel_depth = texel_view_maps(geo["position"], cam, valid)
        vin = VisibilityInputs(
            position=geo["position"],
            face_normal=geo["face_normal"],
            texel_xy=texel_xy,
            texel_depth=texel_depth,
            image_depth=depth_buf,
            image_mask=masks[i],
            camera=cam,
            valid=valid,
        )
        visibilities.append(visibility_map(vin, delta, epsilon))
        partials.append(partial_texture(
            images[i], texel_xy, valid, mask=masks[i],
            image_depth=depth_buf, texel_depth=texel_depth, epsilon=epsilon,
        ))
    return fuse_views(partials, visibilities)
