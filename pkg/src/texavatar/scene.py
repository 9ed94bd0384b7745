"""Shared domain types: meshes, skeletons, motions, cameras, and texel rasters.

All types are immutable after construction (arrays are treated as read-only
by convention) and safe to share across workers. Units are meters throughout;
depth buffers store meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

# Tags for TexelMap.kind, also used as the DUTF kind field.
TEXEL_KINDS = (
    "color",
    "visibility",
    "normal",
    "position",
    "depth",
    "lbs_transform",
    "deformation",
    "scale_ratio",
    "gaussian_params",
    "mask",
)

MAX_SKIN_INFLUENCES = 8


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for root
    canonical: np.ndarray  # (4, 4) canonical-pose joint-to-world transform


@dataclass(frozen=True)
class SkinnedTemplate:
    """UV-mapped triangle mesh with skeleton and skinning weights.

    ``uv_coords`` are per-corner (one UV per triangle corner) so seams are
    representable; ``vertex_uv`` assigns each vertex one canonical UV (first
    corner encountered) used for deformation-map lookups.
    """

    vertices: np.ndarray  # (N, 3) canonical-pose positions
    triangles: np.ndarray  # (F, 3) int vertex indices
    uv_coords: np.ndarray  # (F, 3, 2) per-corner UVs in [0, 1]^2
    joints: tuple[Joint, ...]
    skin_indices: np.ndarray  # (N, K) int joint indices, K <= 8, padded with 0
    skin_weights: np.ndarray  # (N, K) weights, padded with 0, rows sum to 1
    # Derived adjacency, filled by build_adjacency:
    edges: Optional[np.ndarray] = None  # (E, 2) unique undirected edges, i < j
    vertex_neighbors: Optional[tuple[np.ndarray, ...]] = None  # one-ring per vertex
    vertex_edges: Optional[tuple[np.ndarray, ...]] = None  # incident edge ids per vertex
    vertex_uv: np.ndarray = field(default=None)  # (N, 2), derived in __post_init__

    def __post_init__(self):
        if self.vertex_uv is None:
            object.__setattr__(self, "vertex_uv", _first_corner_uvs(self))

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    def inverse_canonical_transforms(self) -> np.ndarray:
        """(J, 4, 4) inverses of the canonical joint transforms (rigid inverse)."""
        out = np.empty((self.num_joints, 4, 4))
        for j, joint in enumerate(self.joints):
            out[j] = invert_rigid(joint.canonical)
        return out


def _first_corner_uvs(t: SkinnedTemplate) -> np.ndarray:
    uv = np.zeros((t.vertices.shape[0], 2))
    seen = np.zeros(t.vertices.shape[0], dtype=bool)
    tris = t.triangles.reshape(-1)
    corners = t.uv_coords.reshape(-1, 2)
    # first corner encountered wins
    for flat_idx in range(tris.shape[0]):
        v = tris[flat_idx]
        if v < 0 or v >= seen.shape[0]:
            continue  # out-of-range index; validate_template reports it
        if not seen[v]:
            uv[v] = corners[flat_idx]
            seen[v] = True
    return uv


@dataclass(frozen=True)
class MotionFrame:
    """Per-joint rigid world transforms for one time step."""

    joint_transforms: np.ndarray  # (J, 4, 4)
    frame_index: int = 0

    @property
    def num_joints(self) -> int:
        return int(self.joint_transforms.shape[0])


@dataclass(frozen=True)
class Camera:
    intrinsics: np.ndarray  # (3, 3)
    extrinsics: np.ndarray  # (4, 4) world-to-camera rigid transform
    width: int
    height: int

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Optical center in world space."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]

    def __len__(self) -> int:
        return len(self.cameras)


@dataclass(frozen=True)
class TexelMap:
    """Fixed-resolution multi-channel raster in UV space (R x R x C).

    Texel (row r, col c) covers UV [(c/R, r/R), ((c+1)/R, (r+1)/R)) with its
    center at ((c+0.5)/R, (r+0.5)/R); v grows with the row index.
    """

    resolution: int
    channels: int
    data: np.ndarray  # (R, R, C) float32
    kind: str

    def __post_init__(self):
        if self.kind not in TEXEL_KINDS:
            raise ValueError(f"unknown texel map kind {self.kind!r}")
        if self.data.shape != (self.resolution, self.resolution, self.channels):
            raise ValueError(
                f"data shape {self.data.shape} does not match "
                f"{(self.resolution, self.resolution, self.channels)}"
            )

    @staticmethod
    def zeros(resolution: int, channels: int, kind: str) -> "TexelMap":
        return TexelMap(
            resolution, channels,
            np.zeros((resolution, resolution, channels), dtype=np.float32), kind,
        )


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def invert_rigid(m: np.ndarray) -> np.ndarray:
    """Invert a rigid 4x4 transform using the transpose of the rotation block."""
    out = np.eye(4)
    r = m[:3, :3]
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ m[:3, 3]
    return out


def validate_template(t: SkinnedTemplate) -> list[str]:
    """Check every SkinnedTemplate invariant; returns the list of violations.

    Total function: never raises, an empty list means the template is valid.
    """
    violations: list[str] = []
    n = t.num_vertices
    tris = t.triangles
    if tris.size and (tris.min() < 0 or tris.max() >= n):
        for f in range(tris.shape[0]):
            bad = [int(v) for v in tris[f] if v < 0 or v >= n]
            if bad:
                violations.append(
                    f"triangle {f}: vertex index out of range {bad}"
                )
    for f in range(tris.shape[0]):
        if len(set(int(v) for v in tris[f])) != 3:
            violations.append(f"triangle {f}: repeated vertex index (degenerate)")
    if t.uv_coords.size and (t.uv_coords.min() < 0.0 or t.uv_coords.max() > 1.0):
        bad_faces = np.nonzero(
            np.any((t.uv_coords < 0.0) | (t.uv_coords > 1.0), axis=(1, 2))
        )[0]
        for f in bad_faces:
            violations.append(f"triangle {int(f)}: UV coordinate outside [0,1]^2")
    wsum = t.skin_weights.sum(axis=1)
    bad_sum = np.nonzero(np.abs(wsum - 1.0) > 1e-6)[0]
    for v in bad_sum:
        violations.append(
            f"vertex {int(v)}: skin weights sum to {wsum[v]:.6g}, expected 1"
        )
    neg = np.nonzero(np.any(t.skin_weights < 0.0, axis=1))[0]
    for v in neg:
        violations.append(f"vertex {int(v)}: negative skin weight")
    nj = t.num_joints
    if t.skin_indices.size and (t.skin_indices.min() < 0 or t.skin_indices.max() >= nj):
        bad = np.nonzero(np.any((t.skin_indices < 0) | (t.skin_indices >= nj), axis=1))[0]
        for v in bad:
            violations.append(f"vertex {int(v)}: skin joint index out of range")
    for j, joint in enumerate(t.joints):
        r = joint.canonical[:3, :3]
        if not _is_rotation(r, 1e-5):
            violations.append(f"joint {j} ({joint.name}): canonical rotation not in SO(3)")
        if joint.parent >= nj or joint.parent == j:
            violations.append(f"joint {j} ({joint.name}): invalid parent {joint.parent}")
    if t.edges is not None and t.vertex_neighbors is not None:
        for i, nbrs in enumerate(t.vertex_neighbors):
            for j in nbrs:
                if i not in t.vertex_neighbors[int(j)]:
                    violations.append(f"vertex {i}: asymmetric neighbor {int(j)}")
    return violations


def _is_rotation(r: np.ndarray, tol: float) -> bool:
    return (
        np.allclose(r @ r.T, np.eye(3), atol=tol)
        and np.linalg.det(r) > 0.0
    )


def validate_motion(t: SkinnedTemplate, m: MotionFrame) -> list[str]:
    violations = []
    if m.num_joints != t.num_joints:
        violations.append(
            f"motion has {m.num_joints} joints, skeleton has {t.num_joints}"
        )
    for j in range(m.num_joints):
        if not _is_rotation(m.joint_transforms[j, :3, :3], 1e-5):
            violations.append(f"joint {j}: motion rotation not in SO(3)")
    return violations


def validate_camera(cam: Camera) -> list[str]:
    violations = []
    if cam.fx <= 0 or cam.fy <= 0:
        violations.append("non-positive focal length")
    if not (0 <= cam.cx < cam.width and 0 <= cam.cy < cam.height):
        violations.append("principal point outside image")
    if not _is_rotation(cam.rotation, 1e-5):
        violations.append("extrinsic rotation not in SO(3)")
    return violations


def build_adjacency(t: SkinnedTemplate) -> SkinnedTemplate:
    """Fill edges / vertex_neighbors / vertex_edges; idempotent.

    Rejects meshes containing degenerate triangles (repeated vertex indices).
    """
    tris = t.triangles
    for f in range(tris.shape[0]):
        a, b, c = (int(v) for v in tris[f])
        if a == b or b == c or a == c:
            raise ValueError(f"degenerate triangle {f}: {(a, b, c)}")
    pairs = np.concatenate(
        [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0
    )
    pairs = np.sort(pairs, axis=1)
    edges = np.unique(pairs, axis=0)
    nbrs: list[list[int]] = [[] for _ in range(t.num_vertices)]
    vedges: list[list[int]] = [[] for _ in range(t.num_vertices)]
    for e, (i, j) in enumerate(edges):
        nbrs[int(i)].append(int(j))
        nbrs[int(j)].append(int(i))
        vedges[int(i)].append(e)
        vedges[int(j)].append(e)
    return replace(
        t,
        edges=edges,
        vertex_neighbors=tuple(np.array(sorted(x), dtype=np.int64) for x in nbrs),
        vertex_edges=tuple(np.array(x, dtype=np.int64) for x in vedges),
    )


def make_skinning(
    influences: Sequence[Sequence[tuple[int, float]]],
) -> tuple[np.ndarray, np.ndarray]:
    """Pack per-vertex (joint, weight) lists into padded arrays, renormalizing.

    Keeps at most MAX_SKIN_INFLUENCES influences per vertex (largest weights).
    """
    n = len(influences)
    k = min(MAX_SKIN_INFLUENCES, max((len(x) for x in influences), default=1))
    idx = np.zeros((n, k), dtype=np.int64)
    w = np.zeros((n, k))
    for v, infl in enumerate(influences):
        infl = sorted(infl, key=lambda p: -p[1])[:k]
        s = sum(wt for _, wt in infl)
        if s <= 0:
            raise ValueError(f"vertex {v}: non-positive skin weight sum")
        for slot, (j, wt) in enumerate(infl):
            idx[v, slot] = j
            w[v, slot] = wt / s
    return idx, w
