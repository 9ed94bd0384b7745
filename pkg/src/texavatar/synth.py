"""Seeded synthetic scenes with known ground truth.

The body is a closed tube ("capsule") along +z with a 3-joint chain, a
checker albedo with a smooth sinusoidal modulation, and a known normal-
direction inflation bump separating the ground-truth template from the
tracking template. Condition and held-out cameras sit on interleaved rings
around the body. Ground-truth images, masks, and per-frame surface point
clouds are rendered/sampled from the ground-truth geometry only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as tio
from . import raster
from .kinematics import pose_vertices
from .scene import (
    Camera,
    CameraRig,
    Joint,
    MotionFrame,
    PointCloud,
    SkinnedTemplate,
    TexelMap,
    build_adjacency,
    make_skinning,
)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 7
    rings: int = 28
    segments: int = 40
    length: float = 0.8  # meters
    radius: float = 0.12
    bump_amplitude: float = 0.02  # meters
    texture_resolution: int = 256
    image_size: int = 512
    num_condition_views: int = 4
    num_holdout_views: int = 4
    camera_distance: float = 1.6
    fov_deg: float = 40.0
    bend_deg: float = 25.0
    stretch_offset: float = 0.10  # extra +z translation of the top joint
    pointcloud_size: int = 8000

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SceneConfig":
        return SceneConfig(**json.loads(text))


@dataclass
class SyntheticScene:
    config: SceneConfig
    gt_template: SkinnedTemplate  # deformed canonical geometry (ground truth)
    tracking_template: SkinnedTemplate  # undeformed template the pipeline sees
    gt_texture: TexelMap
    rig_condition: CameraRig
    rig_holdout: CameraRig
    motions: list[MotionFrame]
    gt_pointclouds: list[PointCloud]
    images: dict = field(default_factory=dict)  # (frame, view) -> (H, W, 3)
    masks: dict = field(default_factory=dict)
    holdout_images: dict = field(default_factory=dict)
    holdout_masks: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.motions)


# ---------------------------------------------------------------------------
# Geometry

def _tube_profile(v: np.ndarray, radius: float) -> np.ndarray:
    # closed at both ends, full radius at the waist
    return radius * np.sqrt(np.clip(4.0 * v * (1.0 - v), 0.0, 1.0))


def build_body_template(cfg: SceneConfig) -> SkinnedTemplate:
    nr, ns = cfg.rings, cfg.segments
    length, radius = cfg.length, cfg.radius
    vs = (np.arange(1, nr + 1)) / (nr + 1)
    thetas = 2.0 * np.pi * np.arange(ns) / ns

    verts = []
    for v in vs:
        r = _tube_profile(np.array([v]), radius)[0]
        for th in thetas:
            verts.append([r * np.cos(th), r * np.sin(th), length * v])
    bottom = len(verts)
    verts.append([0.0, 0.0, 0.0])
    top = len(verts)
    verts.append([0.0, 0.0, length])
    vertices = np.array(verts)

    def ring(iz: int, it: int) -> int:
        return iz * ns + (it % ns)

    tris = []
    uvs = []

    def uv(iz: int, it: int) -> tuple[float, float]:
        # seam: the wrapped corner uses u = 1.0 instead of 0.0
        u = it / ns
        return (u, vs[iz])

    for iz in range(nr - 1):
        for it in range(ns):
            a, b = ring(iz, it), ring(iz, it + 1)
            c, d = ring(iz + 1, it), ring(iz + 1, it + 1)
            ua, ub = uv(iz, it), uv(iz, it + 1)
            uc, ud = uv(iz + 1, it), uv(iz + 1, it + 1)
            if it == ns - 1:
                ub = (1.0, ub[1])
                ud = (1.0, ud[1])
            tris.append([a, b, c])
            uvs.append([ua, ub, uc])
            tris.append([b, d, c])
            uvs.append([ub, ud, uc])
    for it in range(ns):  # bottom fan (outward: seen from -z, theta clockwise)
        a, b = ring(0, it), ring(0, it + 1)
        ua, ub = uv(0, it), uv(0, it + 1)
        if it == ns - 1:
            ub = (1.0, ub[1])
        um = ((ua[0] + ub[0]) / 2.0, 0.0)
        tris.append([bottom, b, a])
        uvs.append([um, ub, ua])
    for it in range(ns):  # top fan
        a, b = ring(nr - 1, it), ring(nr - 1, it + 1)
        ua, ub = uv(nr - 1, it), uv(nr - 1, it + 1)
        if it == ns - 1:
            ub = (1.0, ub[1])
        um = ((ua[0] + ub[0]) / 2.0, 1.0)
        tris.append([top, a, b])
        uvs.append([um, ua, ub])

    joints = (
        Joint("root", -1, _translation(0.0, 0.0, 0.0)),
        Joint("mid", 0, _translation(0.0, 0.0, 0.45 * length)),
        Joint("top", 1, _translation(0.0, 0.0, 0.72 * length)),
    )
    influences = []
    z1, z2 = 0.45 * length, 0.72 * length
    h = 0.06  # transition half-width in meters
    for p in vertices:
        z = p[2]
        influences.append(_blend_weights(z, z1, z2, h))
    idx, w = make_skinning(influences)
    t = SkinnedTemplate(
        vertices=vertices,
        triangles=np.array(tris, dtype=np.int64),
        uv_coords=np.array(uvs),
        joints=joints,
        skin_indices=idx,
        skin_weights=w,
    )
    return build_adjacency(t)


def _translation(x: float, y: float, z: float) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = [x, y, z]
    return m


def _blend_weights(z: float, z1: float, z2: float, h: float) -> list[tuple[int, float]]:
    def ramp(z0: float) -> float:
        # 0 below the band, 1 above, linear within
        return float(np.clip((z - (z0 - h)) / (2.0 * h), 0.0, 1.0))

    w_mid_up = ramp(z1)  # weight moving from root to mid
    w_top_up = ramp(z2)  # weight moving from mid to top
    w_root = 1.0 - w_mid_up
    w_top = w_top_up
    w_mid = max(0.0, 1.0 - w_root - w_top)
    out = []
    for j, w in ((0, w_root), (1, w_mid), (2, w_top)):
        if w > 0.0:
            out.append((j, w))
    return out


def ground_truth_displacements(t: SkinnedTemplate, cfg: SceneConfig) -> np.ndarray:
    """Known canonical-space deformation field: a smooth inflation bump along
    the surface normal.

    The magnitude stays at a substantial fraction of the amplitude over almost
    the whole surface (it only falls to zero right at the poles), so the
    misalignment of a single texture unprojection is observable everywhere.
    Displacing along the smooth surface normal keeps the field recoverable by
    closest-point geometry fitting (a tangential component would be invisible
    to a Chamfer objective).
    """
    from .raster import vertex_normals

    p = t.vertices
    theta = np.arctan2(p[:, 1], p[:, 0])
    v = p[:, 2] / cfg.length
    normals = vertex_normals(t, p)
    profile = np.sin(np.pi * np.clip(v, 0.0, 1.0)) ** 0.3
    angular = 0.9 + 0.1 * np.cos(2.0 * theta)
    magnitude = cfg.bump_amplitude * profile * angular
    return normals * magnitude[:, None]


def make_gt_texture(cfg: SceneConfig) -> TexelMap:
    """Checker plus a smooth sinusoidal modulation.

    The smooth component keeps a nonzero color gradient everywhere, so any
    texture misalignment produces a proportional reconstruction error instead
    of disappearing inside flat regions.
    """
    r = cfg.texture_resolution
    cells = 16
    yy, xx = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    checker = ((xx * cells // r) + (yy * cells // r)) % 2
    base_a = np.array([0.85, 0.35, 0.25])
    base_b = np.array([0.20, 0.45, 0.80])
    data = np.where(checker[:, :, None] > 0, base_a, base_b)
    u = (xx + 0.5) / r
    v = (yy + 0.5) / r
    wave = 0.10 * np.sin(2.0 * np.pi * 3.0 * u) * np.sin(2.0 * np.pi * 3.0 * v)
    ramp = 0.05 * np.sin(2.0 * np.pi * (u + 2.0 * v))
    data = data + (wave + ramp)[:, :, None]
    data = np.clip(data, 0.05, 0.95)
    return TexelMap(r, 3, data.astype(np.float32), "color")


# ---------------------------------------------------------------------------
# Cameras and motion

def look_at_camera(position: np.ndarray, target: np.ndarray, up: np.ndarray,
                   fov_deg: float, width: int, height: int) -> Camera:
    zc = target - position
    zc = zc / np.linalg.norm(zc)
    xc = np.cross(zc, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(xc)
    if nx < 1e-9:
        raise ValueError("view direction parallel to up vector")
    xc = xc / nx
    yc = np.cross(zc, xc)
    rot = np.stack([xc, yc, zc], axis=0)
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = -rot @ position
    f = (height / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    intr = np.array([
        [f, 0.0, (width - 1) / 2.0],
        [0.0, f, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])
    return Camera(intrinsics=intr, extrinsics=ext, width=width, height=height)


def build_rigs(cfg: SceneConfig) -> tuple[CameraRig, CameraRig]:
    """Condition and held-out camera rings.

    The condition azimuths are deliberately non-uniform (paired 60 degrees
    apart) so every surface point is observed by at least one camera 30-60
    degrees off its normal; with a uniform ring, points straight in front of
    a camera would be seen near-frontally only.
    """
    center = np.array([0.0, 0.0, cfg.length / 2.0])
    up = np.array([0.0, 0.0, 1.0])

    def ring_cams(azimuths_deg: list[float]) -> CameraRig:
        cams = []
        for az_deg in azimuths_deg:
            az = np.deg2rad(az_deg)
            pos = center + cfg.camera_distance * np.array([np.cos(az), np.sin(az), 0.05])
            cams.append(look_at_camera(pos, center, up, cfg.fov_deg,
                                       cfg.image_size, cfg.image_size))
        return CameraRig(cameras=tuple(cams))

    if cfg.num_condition_views == 4:
        cond = [0.0, 60.0, 180.0, 240.0]
    else:
        cond = [360.0 * i / cfg.num_condition_views for i in range(cfg.num_condition_views)]
    if cfg.num_holdout_views == 4:
        hold = [30.0, 120.0, 210.0, 300.0]
    else:
        hold = [360.0 * (i + 0.5) / cfg.num_holdout_views for i in range(cfg.num_holdout_views)]
    return ring_cams(cond), ring_cams(hold)


def motion_from_locals(t: SkinnedTemplate, local_deltas: dict[int, np.ndarray],
                       frame_index: int = 0) -> MotionFrame:
    """Forward kinematics: world_j = world_parent * rest_local_j * delta_j."""
    inv_can = t.inverse_canonical_transforms()
    world = [None] * t.num_joints
    for j, joint in enumerate(t.joints):
        delta = local_deltas.get(j, np.eye(4))
        if joint.parent < 0:
            rest_local = joint.canonical
            world[j] = rest_local @ delta
        else:
            rest_local = inv_can[joint.parent] @ joint.canonical
            world[j] = world[joint.parent] @ rest_local @ delta
    return MotionFrame(joint_transforms=np.stack(world), frame_index=frame_index)


def _rot_x(deg: float) -> np.ndarray:
    m = np.eye(4)
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
    return m


def rest_motion(t: SkinnedTemplate, frame_index: int = 0) -> MotionFrame:
    return MotionFrame(
        joint_transforms=np.stack([j.canonical for j in t.joints]),
        frame_index=frame_index,
    )


def build_motions(t: SkinnedTemplate, cfg: SceneConfig) -> list[MotionFrame]:
    rest = rest_motion(t, 0)
    bent = motion_from_locals(t, {1: _rot_x(cfg.bend_deg)}, 1)
    stretched = motion_from_locals(t, {2: _translation(0.0, 0.0, cfg.stretch_offset)}, 2)
    return [rest, bent, stretched]


# ---------------------------------------------------------------------------
# Scene assembly

def sample_surface(t: SkinnedTemplate, positions: np.ndarray, count: int,
                   rng: np.random.Generator) -> PointCloud:
    """Area-uniform surface samples of the mesh at the given vertex positions."""
    v0 = positions[t.triangles[:, 0]]
    v1 = positions[t.triangles[:, 1]]
    v2 = positions[t.triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)
    probs = areas / areas.sum()
    faces = rng.choice(len(areas), size=count, p=probs)
    r1 = rng.random(count)
    r2 = rng.random(count)
    sq = np.sqrt(r1)
    b0 = 1.0 - sq
    b1 = sq * (1.0 - r2)
    b2 = sq * r2
    pts = b0[:, None] * v0[faces] + b1[:, None] * v1[faces] + b2[:, None] * v2[faces]
    return PointCloud(points=pts)


def synth(cfg: SceneConfig) -> SyntheticScene:
    rng = np.random.default_rng(cfg.seed)
    tracking = build_body_template(cfg)
    disp = ground_truth_displacements(tracking, cfg)
    gt = replace(tracking, vertices=tracking.vertices + disp)
    texture = make_gt_texture(cfg)
    rig_c, rig_h = build_rigs(cfg)
    motions = build_motions(tracking, cfg)

    scene = SyntheticScene(
        config=cfg, gt_template=gt, tracking_template=tracking,
        gt_texture=texture, rig_condition=rig_c, rig_holdout=rig_h,
        motions=motions, gt_pointclouds=[],
    )
    for f, motion in enumerate(motions):
        posed_gt = pose_vertices(gt, motion)
        scene.gt_pointclouds.append(
            sample_surface(gt, posed_gt, cfg.pointcloud_size, rng)
        )
        for v, cam in enumerate(rig_c.cameras):
            buf = raster.rasterize_image(gt, posed_gt, cam, texture=texture)
            scene.images[(f, v)] = buf.data
            scene.masks[(f, v)] = buf.mask
        for v, cam in enumerate(rig_h.cameras):
            buf = raster.rasterize_image(gt, posed_gt, cam, texture=texture)
            scene.holdout_images[(f, v)] = buf.data
            scene.holdout_masks[(f, v)] = buf.mask
    return scene


def save_scene(scene: SyntheticScene, out_dir: str | Path) -> None:
    out = Path(out_dir)
    for sub in ("images", "masks", "holdout_images", "holdout_masks", "pointclouds"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "scene_config.json").write_text(scene.config.to_json())
    tio.save_template(out / "template.obj", out / "skeleton.json", scene.tracking_template)
    tio.save_template(out / "gt_template.obj", out / "gt_skeleton.json", scene.gt_template)
    tio.save_motion(out / "motion.json", scene.motions)
    tio.save_rig(out / "cameras_condition.json", scene.rig_condition)
    tio.save_rig(out / "cameras_holdout.json", scene.rig_holdout)
    tio.save_dutf(out / "gt_texture.dutf", scene.gt_texture)
    for f in range(scene.num_frames):
        np.save(out / "pointclouds" / f"f{f:03d}.npy",
                scene.gt_pointclouds[f].points.astype(np.float32))
        for v in range(len(scene.rig_condition)):
            tio.save_png(out / "images" / f"f{f:03d}_v{v:02d}.png", scene.images[(f, v)])
            tio.save_png(out / "masks" / f"f{f:03d}_v{v:02d}.png", scene.masks[(f, v)])
        for v in range(len(scene.rig_holdout)):
            tio.save_png(out / "holdout_images" / f"f{f:03d}_v{v:02d}.png",
                         scene.holdout_images[(f, v)])
            tio.save_png(out / "holdout_masks" / f"f{f:03d}_v{v:02d}.png",
                         scene.holdout_masks[(f, v)])


def load_scene(scene_dir: str | Path) -> SyntheticScene:
    d = Path(scene_dir)
    cfg = SceneConfig.from_json((d / "scene_config.json").read_text())
    tracking = build_adjacency(tio.load_template(d / "template.obj", d / "skeleton.json"))
    gt = build_adjacency(tio.load_template(d / "gt_template.obj", d / "gt_skeleton.json"))
    motions = tio.load_motion(d / "motion.json")
    scene = SyntheticScene(
        config=cfg, gt_template=gt, tracking_template=tracking,
        gt_texture=tio.load_dutf(d / "gt_texture.dutf"),
        rig_condition=tio.load_rig(d / "cameras_condition.json"),
        rig_holdout=tio.load_rig(d / "cameras_holdout.json"),
        motions=motions, gt_pointclouds=[],
    )
    for f in range(len(motions)):
        pts = np.load(d / "pointclouds" / f"f{f:03d}.npy").astype(np.float64)
        scene.gt_pointclouds.append(PointCloud(points=pts))
        for v in range(len(scene.rig_condition)):
            scene.images[(f, v)] = tio.load_png(d / "images" / f"f{f:03d}_v{v:02d}.png")
            scene.masks[(f, v)] = tio.load_png(d / "masks" / f"f{f:03d}_v{v:02d}.png")
        for v in range(len(scene.rig_holdout)):
            scene.holdout_images[(f, v)] = tio.load_png(
                d / "holdout_images" / f"f{f:03d}_v{v:02d}.png")
            scene.holdout_masks[(f, v)] = tio.load_png(
                d / "holdout_masks" / f"f{f:03d}_v{v:02d}.png")
    return scene
