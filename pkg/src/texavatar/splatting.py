"""Tile-based software rasterizer for world-space Gaussian sets.

3D covariances are projected to 2D through the Jacobian of the pinhole
projection (with an optional +0.3 px^2 low-pass dilation), Gaussians are
binned into screen tiles by their 3-sigma footprint, globally sorted by
camera depth (ties broken by index), and composited front to back per pixel
with float64 accumulation. Contributions are cut off exactly at the 3-sigma
ellipse so the image is independent of the tile size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianSet, sh_basis
from .raster import ImageBuffer
from .scene import Camera

NEAR_PLANE = 0.01  # meters
COVARIANCE_DILATION = 0.3  # px^2 added to the 2D covariance diagonal
FOOTPRINT_SIGMA = 3.0
CUTOFF_MAHALANOBIS_SQ = FOOTPRINT_SIGMA ** 2
MIN_TRANSMITTANCE = 1e-4


@dataclass(frozen=True)
class SplatFrame:
    color: ImageBuffer
    alpha: np.ndarray  # (H, W) accumulated opacity
    splat_count: np.ndarray  # (H, W) int32, contributing Gaussians per pixel
    skipped_singular: int  # Gaussians dropped for singular 2D covariance


def project_covariance(
    cov: np.ndarray, p: np.ndarray, cam: Camera, dilation: float = COVARIANCE_DILATION
) -> tuple[np.ndarray, np.ndarray]:
    """EWA projection of one Gaussian: (2D mean px, 2x2 covariance px^2).

    Requires the mean in front of the camera (z > NEAR_PLANE).
    """
    mean2d, cov2d, z = _project_batch(
        p[None, :], cov[None, :, :], cam, dilation
    )
    if z[0] <= NEAR_PLANE:
        raise ValueError("Gaussian mean behind the near plane")
    return mean2d[0], cov2d[0]


def _project_batch(
    p: np.ndarray, cov: np.ndarray, cam: Camera, dilation: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = p @ cam.rotation.T + cam.translation
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    zs = np.where(z > NEAR_PLANE, z, 1.0)
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    inv_z = 1.0 / zs
    inv_z2 = inv_z * inv_z
    n = p.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * x * inv_z2
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * y * inv_z2
    m = jac @ cam.rotation[None, :, :]
    cov2d = m @ cov @ m.transpose(0, 2, 1)
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation
    return mean2d, cov2d, z


def render(
    gaussians: GaussianSet,
    cam: Camera,
    background: tuple[float, float, float] = (0.0, 0.0, 0.0),
    tile_size: int = 16,
    dilation: float = COVARIANCE_DILATION,
) -> SplatFrame:
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    color_acc = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    count = np.zeros((h, w), dtype=np.int32)
    skipped = 0

    n = len(gaussians)
    if n:
        mean2d, cov2d, z = _project_batch(
            gaussians.positions, gaussians.covariances, cam, dilation
        )
        in_front = z > NEAR_PLANE
        det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
        singular = in_front & (det <= 0.0)
        skipped = int(singular.sum())
        keep = in_front & ~singular

        # 3-sigma footprint radius from the largest eigenvalue
        mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = FOOTPRINT_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))
        keep &= (
            (mean2d[:, 0] + radius >= 0.0) & (mean2d[:, 0] - radius <= w - 1)
            & (mean2d[:, 1] + radius >= 0.0) & (mean2d[:, 1] - radius <= h - 1)
        )
        ids = np.nonzero(keep)[0]
        if ids.size:
            # global front-to-back order, ties broken by Gaussian index
            order = ids[np.argsort(z[ids], kind="stable")]
            # view-dependent colors once per Gaussian
            dirs = gaussians.positions[order] - cam.center
            dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-30)
            basis = sh_basis(gaussians.sh_degree, dirs)
            colors = 0.5 + np.einsum("qk,qkc->qc", basis, gaussians.sh[order])
            colors = np.clip(colors, 0.0, 1.0)

            inv = np.empty((order.size, 2, 2))
            dd = det[order]
            inv[:, 0, 0] = cov2d[order, 1, 1] / dd
            inv[:, 1, 1] = cov2d[order, 0, 0] / dd
            inv[:, 0, 1] = inv[:, 1, 0] = -cov2d[order, 0, 1] / dd
            mu = mean2d[order]
            rad = radius[order]
            alpha = gaussians.opacities[order]

            tiles_x = (w + tile_size - 1) // tile_size
            tiles_y = (h + tile_size - 1) // tile_size
            tx0 = np.clip(((mu[:, 0] - rad) // tile_size).astype(np.int64), 0, tiles_x - 1)
            tx1 = np.clip(((mu[:, 0] + rad) // tile_size).astype(np.int64), 0, tiles_x - 1)
            ty0 = np.clip(((mu[:, 1] - rad) // tile_size).astype(np.int64), 0, tiles_y - 1)
            ty1 = np.clip(((mu[:, 1] + rad) // tile_size).astype(np.int64), 0, tiles_y - 1)
            spans_x = (tx1 - tx0 + 1)
            spans_y = (ty1 - ty0 + 1)
            counts = spans_x * spans_y
            g_rep = np.repeat(np.arange(order.size), counts)
            # enumerate covered tiles per Gaussian
            offs = np.concatenate([np.arange(c) for c in counts]) if counts.size else np.empty(0, np.int64)
            gx = tx0[g_rep] + offs % spans_x[g_rep]
            gy = ty0[g_rep] + offs // spans_x[g_rep]
            tile_id = gy * tiles_x + gx
            perm = np.lexsort((g_rep, tile_id))  # per tile, keep sorted order
            tile_sorted = tile_id[perm]
            g_sorted = g_rep[perm]
            bounds = np.searchsorted(tile_sorted, np.arange(tiles_x * tiles_y + 1))

            for ty in range(tiles_y):
                for tx in range(tiles_x):
                    tid = ty * tiles_x + tx
                    lo, hi = bounds[tid], bounds[tid + 1]
                    if lo == hi:
                        continue
                    g = g_sorted[lo:hi]
                    px0, py0 = tx * tile_size, ty * tile_size
                    px1, py1 = min(px0 + tile_size, w), min(py0 + tile_size, h)
                    xs = np.arange(px0, px1, dtype=np.float64)
                    ys = np.arange(py0, py1, dtype=np.float64)
                    dx = xs[None, :, None] - mu[g, 0][None, None, :]  # (py, px, K)
                    dy = ys[:, None, None] - mu[g, 1][None, None, :]
                    maha = (
                        inv[g, 0, 0] * dx * dx
                        + 2.0 * inv[g, 0, 1] * dx * dy
                        + inv[g, 1, 1] * dy * dy
                    )
                    a = alpha[g] * np.exp(-0.5 * maha)
                    a[maha > CUTOFF_MAHALANOBIS_SQ] = 0.0
                    # front-to-back transmittance before each Gaussian
                    t_local = np.cumprod(1.0 - a, axis=2)
                    t_in = trans[py0:py1, px0:px1]
                    t_before = np.concatenate(
                        [t_in[:, :, None], t_in[:, :, None] * t_local[:, :, :-1]], axis=2
                    )
                    include = t_before >= MIN_TRANSMITTANCE
                    contrib = a * t_before * include
                    color_acc[py0:py1, px0:px1] += np.einsum(
                        "yxk,kc->yxc", contrib, colors[g]
                    )
                    count[py0:py1, px0:px1] += ((a > 0.0) & include).sum(axis=2)
                    # transmittance after the last included Gaussian
                    factors = np.where(include, 1.0 - a, 1.0)
                    trans[py0:py1, px0:px1] = t_in * factors.prod(axis=2)

    out_color = color_acc + trans[:, :, None] * bg[None, None, :]
    img = ImageBuffer(
        width=w, height=h, channels=3,
        data=out_color.astype(np.float32),
        depth=np.full((h, w), np.inf),
        mask=(1.0 - trans > 0.0).astype(np.float32),
    )
    return SplatFrame(
        color=img, alpha=(1.0 - trans), splat_count=count, skipped_singular=skipped,
    )
