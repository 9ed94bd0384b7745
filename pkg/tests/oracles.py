"""Independent brute-force reference implementations used only by tests.

Everything here is deliberately written the slow, obvious way (explicit loops,
ray casting, direct formulas) so that agreement with the package is evidence,
not tautology.
"""

from __future__ import annotations

import numpy as np

from texavatar.kinematics import lbs_transforms, sample_texel_map_at_uv
from texavatar.scene import Camera, PointCloud, SkinnedTemplate, TexelMap


# ---------------------------------------------------------------------------
# Naive loss-term loops

def chamfer_loop(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance via explicit loops."""
    def one_way(src, dst):
        total = 0.0
        for p in src:
            best = min(float(((p - q) ** 2).sum()) for q in dst)
            total += best
        return total / len(src)

    return one_way(a, b) + one_way(b, a)


def laplacian_loop(t: SkinnedTemplate, posed: np.ndarray) -> float:
    total = 0.0
    for i, nbrs in enumerate(t.vertex_neighbors):
        mean = np.zeros(3)
        for j in nbrs:
            mean += posed[int(j)]
        mean /= len(nbrs)
        d = posed[i] - mean
        total += float(d @ d)
    return total / t.num_vertices


def isometry_loop(t: SkinnedTemplate, deformed: np.ndarray) -> float:
    total = 0.0
    for v in range(t.num_vertices):
        incident = t.vertex_edges[v]
        if incident.size == 0:
            continue
        s = 0.0
        for e in incident:
            i, j = int(t.edges[e, 0]), int(t.edges[e, 1])
            lc = float(np.linalg.norm(t.vertices[i] - t.vertices[j]))
            ld = float(np.linalg.norm(deformed[i] - deformed[j]))
            s += (ld - lc) ** 2
        total += s / len(incident)
    return total / t.num_vertices


def vertex_normals_loop(t: SkinnedTemplate, positions: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(positions, dtype=np.float64)
    for f in range(t.triangles.shape[0]):
        a, b, c = (int(v) for v in t.triangles[f])
        fn = np.cross(positions[b] - positions[a], positions[c] - positions[a])
        for v in (a, b, c):
            acc[v] += fn
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def normal_consistency_loop(t: SkinnedTemplate, deformed: np.ndarray) -> float:
    n = vertex_normals_loop(t, deformed)
    total = 0.0
    for i, nbrs in enumerate(t.vertex_neighbors):
        if len(nbrs) == 0:
            continue
        s = 0.0
        for j in nbrs:
            s += (1.0 - float(n[int(j)] @ n[i])) ** 2
        total += s / len(nbrs)
    return total / t.num_vertices


def total_geometry_loss_numpy(t, m, d_data: np.ndarray, target: PointCloud,
                              weights) -> float:
    """Full geometry objective recomputed from the numpy forward evaluators
    (used as the finite-difference oracle for the analytic gradient)."""
    from texavatar.deformation import (
        chamfer, isometry_loss, laplacian_loss, normal_consistency_loss,
    )

    r = d_data.shape[0]
    # keep float64: finite differences would drown in float32 quantization
    d = TexelMap(r, 3, d_data.astype(np.float64), "deformation")
    disp = sample_texel_map_at_uv(d, t.vertex_uv)
    deformed = t.vertices + disp
    posed = lbs_transforms(t, m).apply(deformed)
    return (
        chamfer(PointCloud(posed), target)
        + weights.lam_lap * laplacian_loss(t, posed)
        + weights.lam_iso * isometry_loss(t, deformed)
        + weights.lam_nc * normal_consistency_loss(t, deformed)
    )


# ---------------------------------------------------------------------------
# Ray-cast visibility oracle

def _ray_triangle_hits(origin: np.ndarray, dirs: np.ndarray,
                       v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Nearest positive hit parameter per ray against one triangle set.

    dirs: (Q, 3) unnormalized directions; returns (Q,) min t over all
    triangles (inf where no hit), with the intersection point origin + t*dir.
    """
    q = dirs.shape[0]
    tmin = np.full(q, np.inf)
    eps = 1e-12
    for f in range(v0.shape[0]):
        e1 = v1[f] - v0[f]
        e2 = v2[f] - v0[f]
        pvec = np.cross(dirs, np.broadcast_to(e2, dirs.shape))  # dirs x e2
        det = pvec @ e1
        ok = np.abs(det) > eps
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - v0[f]
        u = (pvec @ tvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = (dirs @ qvec) * inv_det
        t = (e2 @ qvec) * inv_det
        hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9) & (t > eps)
        tmin = np.where(hit & (t < tmin), t, tmin)
    return tmin


def ray_cast_visibility(
    t: SkinnedTemplate,
    world: np.ndarray,
    cam: Camera,
    texel_pos: np.ndarray,    # (Q, 3) world positions of the tested texels
    texel_normal: np.ndarray,  # (Q, 3) facet normals at those texels
    mask_image: np.ndarray,    # (H, W) foreground mask
    delta: float,
) -> np.ndarray:
    """(Q,) bool: independent visibility decision per texel.

    A texel is visible when (a) the camera is on its front side with
    cos > delta, (b) a ray from the camera to the texel first hits the
    surface at the texel itself (brute-force ray casting against every
    triangle), and (c) it projects inside the frame onto a foreground
    mask pixel (nearest-neighbor lookup).
    """
    center = cam.center
    rays = texel_pos - center
    dist = np.linalg.norm(rays, axis=1)
    ray_unit = rays / np.maximum(dist, 1e-30)[:, None]
    cos = -(ray_unit * texel_normal).sum(axis=1)
    front = cos > delta

    v0 = world[t.triangles[:, 0]]
    v1 = world[t.triangles[:, 1]]
    v2 = world[t.triangles[:, 2]]
    tmin = _ray_triangle_hits(center, rays, v0, v1, v2)
    # first hit at the texel itself (parameter ~1 along the unnormalized ray)
    unoccluded = tmin >= 1.0 - 1e-4

    q = texel_pos @ cam.rotation.T + cam.translation
    z = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = cam.fx * q[:, 0] / z + cam.cx
        y = cam.fy * q[:, 1] / z + cam.cy
    in_frame = (z > 0) & (x >= 0) & (x <= cam.width - 1) & (y >= 0) & (y <= cam.height - 1)
    xi = np.clip(np.round(x), 0, cam.width - 1).astype(np.int64)
    yi = np.clip(np.round(y), 0, cam.height - 1).astype(np.int64)
    fg = mask_image[yi, xi] >= 0.5

    return front & unoccluded & in_frame & fg


def visibility_agreement(seed: int) -> tuple[float, int]:
    """Build one random tube scene + random camera, compare the package's
    visibility map against the ray-cast oracle.

    Returns (fraction of agreeing texels, texel count).
    """
    from texavatar import synth
    from texavatar.kinematics import pose_vertices
    from texavatar.raster import get_texel_chart, rasterize_image, rasterize_texel_geometry
    from texavatar.unprojection import (
        DEFAULT_ANGLE_THRESHOLD,
        DEFAULT_DEPTH_THRESHOLD,
        VisibilityInputs,
        texel_view_maps,
        visibility_map,
    )

    rng = np.random.default_rng(seed)
    cfg = synth.SceneConfig(
        seed=seed,
        rings=int(rng.integers(6, 10)),
        segments=int(rng.integers(10, 15)),
        length=float(rng.uniform(0.6, 1.0)),
        radius=float(rng.uniform(0.08, 0.16)),
        image_size=200,
    )
    t = synth.build_body_template(cfg)
    angle = float(rng.uniform(-25.0, 25.0))
    m = np.eye(4)
    c, s = np.cos(np.deg2rad(angle)), np.sin(np.deg2rad(angle))
    m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
    motion = synth.motion_from_locals(t, {1: m})
    world = pose_vertices(t, motion)

    az = float(rng.uniform(0.0, 360.0))
    el = float(rng.uniform(-0.2, 0.4))
    dist = float(rng.uniform(1.2, 2.2))
    center = np.array([0.0, 0.0, cfg.length / 2.0])
    pos = center + dist * np.array(
        [np.cos(np.deg2rad(az)), np.sin(np.deg2rad(az)), el]
    )
    cam = synth.look_at_camera(pos, center, np.array([0.0, 0.0, 1.0]),
                               cfg.fov_deg, cfg.image_size, cfg.image_size)

    res = 48
    chart = get_texel_chart(t, res)
    geo = rasterize_texel_geometry(t, world, chart)
    buf = rasterize_image(t, world, cam)
    texel_xy, texel_depth = texel_view_maps(geo["position"], cam, chart.mask)
    vis = visibility_map(VisibilityInputs(
        position=geo["position"], face_normal=geo["face_normal"],
        texel_xy=texel_xy, texel_depth=texel_depth,
        image_depth=buf.depth, image_mask=buf.mask, camera=cam, valid=chart.mask,
    ), DEFAULT_ANGLE_THRESHOLD, DEFAULT_DEPTH_THRESHOLD)

    rows, cols = chart.covered
    oracle = ray_cast_visibility(
        t, world, cam,
        geo["position"].data[rows, cols].astype(np.float64),
        geo["face_normal"].data[rows, cols].astype(np.float64),
        buf.mask, DEFAULT_ANGLE_THRESHOLD,
    )
    got = vis.data[rows, cols, 0] > 0.5
    agree = float((got == oracle).mean())
    return agree, int(rows.size)


# ---------------------------------------------------------------------------
# Barycentric point-in-triangle (chart oracle)

def point_strictly_inside(p: np.ndarray, tri: np.ndarray) -> bool:
    """True when p lies strictly inside the 2D triangle (no edge contact)."""
    a, b, c = tri
    area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if area == 0.0:
        return False
    sign = 1.0 if area > 0 else -1.0
    for u, v in ((a, b), (b, c), (c, a)):
        e = sign * ((v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]))
        if e <= 0.0:
            return False
    return True
