"""On-disk formats.

- Template: Wavefront OBJ (v, vt, f with v/vt indices) + sidecar skeleton JSON.
- Motion: JSON array of frames, each a list of 16-float row-major transforms.
- Camera rig: JSON {"cameras": [{intrinsics, extrinsics, width, height}]}.
- Texel maps: DUTF -- magic b"DUTF", u32le width/height/channels/kind, f32le data.
- Images: PNG (8-bit) for color/mask, DUTF for float depth.
- Gaussian sets: flat binary, u32le count then 13 f32 per Gaussian
  (p xyz, covariance upper triangle, rgb, alpha).
"""

from __future__ import annotations

import io as _io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import (
    Camera,
    CameraRig,
    Joint,
    MotionFrame,
    SkinnedTemplate,
    TexelMap,
    TEXEL_KINDS,
    make_skinning,
)

DUTF_MAGIC = b"DUTF"


# ---------------------------------------------------------------------------
# Template: OBJ + skeleton sidecar

def save_obj(path: str | Path, t: SkinnedTemplate) -> None:
    lines = ["# texavatar template"]
    for v in t.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    # per-corner UVs, deduplicated
    uv_flat = t.uv_coords.reshape(-1, 2)
    uv_unique, uv_inverse = np.unique(uv_flat.round(9), axis=0, return_inverse=True)
    for uv in uv_unique:
        lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
    for f in range(t.triangles.shape[0]):
        parts = []
        for c in range(3):
            vi = t.triangles[f, c] + 1
            ti = uv_inverse[f * 3 + c] + 1
            parts.append(f"{vi}/{ti}")
        lines.append("f " + " ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (vertices (N,3), triangles (F,3), uv_coords (F,3,2))."""
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ValueError("only triangle faces are supported")
            vi, ti = [], []
            for p in parts[1:]:
                fields = p.split("/")
                vi.append(int(fields[0]) - 1)
                ti.append(int(fields[1]) - 1)
            faces.append(vi)
            face_uvs.append(ti)
    v = np.array(verts)
    vt = np.array(uvs) if uvs else np.zeros((0, 2))
    tris = np.array(faces, dtype=np.int64)
    uv_coords = vt[np.array(face_uvs, dtype=np.int64)] if faces else np.zeros((0, 3, 2))
    return v, tris, uv_coords


def save_skeleton(path: str | Path, t: SkinnedTemplate) -> None:
    weights = []
    for v in range(t.num_vertices):
        row = [
            [int(t.skin_indices[v, k]), float(t.skin_weights[v, k])]
            for k in range(t.skin_indices.shape[1])
            if t.skin_weights[v, k] > 0.0
        ]
        weights.append(row)
    doc = {
        "joints": [
            {
                "name": j.name,
                "parent": j.parent,
                "canonical_transform": [float(x) for x in j.canonical.reshape(-1)],
            }
            for j in t.joints
        ],
        "weights": weights,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_template(obj_path: str | Path, skeleton_path: str | Path) -> SkinnedTemplate:
    v, tris, uv_coords = load_obj(obj_path)
    doc = json.loads(Path(skeleton_path).read_text())
    joints = tuple(
        Joint(
            name=j["name"],
            parent=int(j["parent"]),
            canonical=np.array(j["canonical_transform"]).reshape(4, 4),
        )
        for j in doc["joints"]
    )
    idx, w = make_skinning([[(int(j), float(wt)) for j, wt in row] for row in doc["weights"]])
    return SkinnedTemplate(
        vertices=v, triangles=tris, uv_coords=uv_coords, joints=joints,
        skin_indices=idx, skin_weights=w,
    )


def save_template(obj_path: str | Path, skeleton_path: str | Path, t: SkinnedTemplate) -> None:
    save_obj(obj_path, t)
    save_skeleton(skeleton_path, t)


# ---------------------------------------------------------------------------
# Motion and cameras

def save_motion(path: str | Path, frames: list[MotionFrame]) -> None:
    doc = [
        [[float(x) for x in tf.reshape(-1)] for tf in f.joint_transforms]
        for f in frames
    ]
    Path(path).write_text(json.dumps(doc))


def load_motion(path: str | Path) -> list[MotionFrame]:
    doc = json.loads(Path(path).read_text())
    return [
        MotionFrame(
            joint_transforms=np.array(frame).reshape(-1, 4, 4), frame_index=i
        )
        for i, frame in enumerate(doc)
    ]


def save_rig(path: str | Path, rig: CameraRig) -> None:
    doc = {
        "cameras": [
            {
                "intrinsics": [float(x) for x in c.intrinsics.reshape(-1)],
                "extrinsics": [float(x) for x in c.extrinsics.reshape(-1)],
                "width": c.width,
                "height": c.height,
            }
            for c in rig.cameras
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_rig(path: str | Path) -> CameraRig:
    doc = json.loads(Path(path).read_text())
    return CameraRig(
        cameras=tuple(
            Camera(
                intrinsics=np.array(c["intrinsics"]).reshape(3, 3),
                extrinsics=np.array(c["extrinsics"]).reshape(4, 4),
                width=int(c["width"]),
                height=int(c["height"]),
            )
            for c in doc["cameras"]
        )
    )


# ---------------------------------------------------------------------------
# DUTF texel maps

def dutf_bytes(m: TexelMap) -> bytes:
    kind_tag = TEXEL_KINDS.index(m.kind)
    header = DUTF_MAGIC + struct.pack(
        "<IIII", m.resolution, m.resolution, m.channels, kind_tag
    )
    return header + np.ascontiguousarray(m.data, dtype="<f4").tobytes()


def save_dutf(path: str | Path, m: TexelMap) -> None:
    Path(path).write_bytes(dutf_bytes(m))


def load_dutf(path: str | Path) -> TexelMap:
    raw = Path(path).read_bytes()
    if raw[:4] != DUTF_MAGIC:
        raise ValueError(f"{path}: not a DUTF file")
    w, h, c, kind_tag = struct.unpack("<IIII", raw[4:20])
    if w != h:
        raise ValueError(f"{path}: non-square texel map {w}x{h}")
    data = np.frombuffer(raw[20:], dtype="<f4").reshape(h, w, c).copy()
    return TexelMap(resolution=h, channels=c, data=data, kind=TEXEL_KINDS[kind_tag])


# ---------------------------------------------------------------------------
# PNG images

def png_bytes(data: np.ndarray) -> bytes:
    """Encode a (H, W) or (H, W, C) float array in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    if u8.ndim == 3 and u8.shape[2] == 1:
        u8 = u8[:, :, 0]
    img = Image.fromarray(u8)
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_png(path: str | Path, data: np.ndarray) -> None:
    Path(path).write_bytes(png_bytes(data))


def load_png(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG as float in [0, 1], shape (H, W) or (H, W, C)."""
    arr = np.asarray(Image.open(path))
    return arr.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Gaussian set flat binary

def save_gaussian_set(path: str | Path, p: np.ndarray, cov: np.ndarray,
                      rgb: np.ndarray, alpha: np.ndarray) -> None:
    n = p.shape[0]
    triu = cov[:, [0, 0, 0, 1, 1, 2], [0, 1, 2, 1, 2, 2]]
    flat = np.concatenate(
        [p, triu, rgb, alpha.reshape(-1, 1)], axis=1
    ).astype("<f4")
    Path(path).write_bytes(struct.pack("<I", n) + flat.tobytes())


def load_gaussian_set(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    n = struct.unpack("<I", raw[:4])[0]
    flat = np.frombuffer(raw[4:], dtype="<f4").reshape(n, 13).astype(np.float64)
    p = flat[:, :3]
    triu = flat[:, 3:9]
    cov = np.empty((n, 3, 3))
    cov[:, 0, 0] = triu[:, 0]
    cov[:, 0, 1] = cov[:, 1, 0] = triu[:, 1]
    cov[:, 0, 2] = cov[:, 2, 0] = triu[:, 2]
    cov[:, 1, 1] = triu[:, 3]
    cov[:, 1, 2] = cov[:, 2, 1] = triu[:, 4]
    cov[:, 2, 2] = triu[:, 5]
    rgb = flat[:, 9:12]
    alpha = flat[:, 12]
    return p, cov, rgb, alpha
