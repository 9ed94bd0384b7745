"""Forward kinematics and linear blend skinning.

Posed vertex positions are V(M, D) = T_LBS(M) (V_bar + pi_uv(V_bar, D)),
where T_LBS blends per-joint rigid deltas (world * canonical^-1) with the
skin weights, and pi_uv samples the deformation map bilinearly at each
vertex's canonical UV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import MotionFrame, SkinnedTemplate, TexelMap, invert_rigid

# Deltas within this distance of identity are snapped to exact identity so
# that an identity motion poses vertices with zero arithmetic error.
_IDENTITY_SNAP_TOL = 1e-7


@dataclass(frozen=True)
class VertexTransforms:
    """Per-vertex rigid-affine 3x4 blends (rows of T_LBS applied at vertices)."""

    per_vertex: np.ndarray  # (N, 3, 4)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) points, one transform per point."""
        return (
            np.einsum("nij,nj->ni", self.per_vertex[:, :, :3], points)
            + self.per_vertex[:, :, 3]
        )


def joint_deltas(t: SkinnedTemplate, m: MotionFrame) -> np.ndarray:
    """(J, 4, 4) world * canonical^-1 per joint, identity-snapped."""
    if m.num_joints != t.num_joints:
        raise ValueError(
            f"motion has {m.num_joints} joints, skeleton has {t.num_joints}"
        )
    inv_can = t.inverse_canonical_transforms()
    deltas = m.joint_transforms @ inv_can
    eye = np.eye(4)
    for j in range(deltas.shape[0]):
        if np.abs(deltas[j] - eye).max() < _IDENTITY_SNAP_TOL:
            deltas[j] = eye
    return deltas


def lbs_transforms(t: SkinnedTemplate, m: MotionFrame) -> VertexTransforms:
    """Blend joint deltas into per-vertex 3x4 transforms.

    If every joint delta is exactly identity the blend is skipped so the
    result is exactly identity regardless of weight rounding.
    """
    deltas = joint_deltas(t, m)
    n = t.num_vertices
    if all(np.array_equal(deltas[j], np.eye(4)) for j in range(deltas.shape[0])):
        out = np.broadcast_to(np.eye(4)[:3], (n, 3, 4)).copy()
        return VertexTransforms(per_vertex=out)
    gathered = deltas[t.skin_indices][:, :, :3, :]  # (N, K, 3, 4)
    blended = np.einsum("nk,nkij->nij", t.skin_weights, gathered)
    return VertexTransforms(per_vertex=blended)


def sample_texel_map_at_uv(m: TexelMap, uv: np.ndarray) -> np.ndarray:
    """Bilinear sample of a texel map at (Q, 2) UVs; texel centers at
    ((c+0.5)/R, (r+0.5)/R), clamped at the borders."""
    r = m.resolution
    x = np.asarray(uv)[:, 0] * r - 0.5
    y = np.asarray(uv)[:, 1] * r - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x0c = np.clip(x0, 0, r - 1)
    x1c = np.clip(x0 + 1, 0, r - 1)
    y0c = np.clip(y0, 0, r - 1)
    y1c = np.clip(y0 + 1, 0, r - 1)
    d = m.data.astype(np.float64)
    out = (
        d[y0c, x0c] * ((1 - fx) * (1 - fy))[:, None]
        + d[y0c, x1c] * (fx * (1 - fy))[:, None]
        + d[y1c, x0c] * ((1 - fx) * fy)[:, None]
        + d[y1c, x1c] * (fx * fy)[:, None]
    )
    return out


def vertex_displacements(t: SkinnedTemplate, d: TexelMap) -> np.ndarray:
    """pi_uv(V_bar, D): per-vertex displacement sampled at canonical UVs."""
    if d.kind != "deformation" or d.channels != 3:
        raise ValueError("deformation map must have kind 'deformation' and 3 channels")
    return sample_texel_map_at_uv(d, t.vertex_uv)


def deformed_canonical_vertices(t: SkinnedTemplate, d: TexelMap | None) -> np.ndarray:
    """T_D(D, V_bar) = V_bar + pi_uv(V_bar, D); V_bar when d is None."""
    if d is None:
        return t.vertices.copy()
    return t.vertices + vertex_displacements(t, d)


def pose_vertices(
    t: SkinnedTemplate, m: MotionFrame, d: TexelMap | None = None
) -> np.ndarray:
    """World positions of all template vertices for motion m and deformation d."""
    deformed = deformed_canonical_vertices(t, d)
    return lbs_transforms(t, m).apply(deformed)


def root_joint(t: SkinnedTemplate) -> int:
    """Index of the designated root: the first joint without a parent."""
    for j, joint in enumerate(t.joints):
        if joint.parent < 0:
            return j
    raise ValueError("skeleton has no root joint (no joint without a parent)")


def strip_root_rotation(t: SkinnedTemplate, m: MotionFrame) -> MotionFrame:
    """Replace the root's world rotation by identity, keeping its translation
    and all child transforms relative to the root unchanged."""
    root = root_joint(t)
    world = m.joint_transforms
    root_tf = world[root]
    stripped_root = np.eye(4)
    stripped_root[:3, 3] = root_tf[:3, 3]
    fix = stripped_root @ invert_rigid(root_tf)

    # which joints are descendants of (or equal to) the root
    parents = [j.parent for j in t.joints]

    def under_root(j: int) -> bool:
        while j >= 0:
            if j == root:
                return True
            j = parents[j]
        return False

    out = world.copy()
    for j in range(t.num_joints):
        if under_root(j):
            out[j] = fix @ world[j]
    return MotionFrame(joint_transforms=out, frame_index=m.frame_index)
