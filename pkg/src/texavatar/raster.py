"""Software triangle rasterization.

Two targets:
  (a) texel space -- surface attributes barycentrically interpolated into the
      UV atlas (position / normal / LBS transform / deformed geometry /
      scale-ratio / validity maps);
  (b) image space -- z-buffered perspective rendering with perspective-correct
      UVs, producing color, depth (meters, inf where empty), and coverage.

Coverage uses a top-left fill rule evaluated at texel / pixel centers; no
antialiasing anywhere, so identical inputs give bit-identical rasters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .kinematics import VertexTransforms
from .scene import Camera, SkinnedTemplate, TexelMap


@dataclass(frozen=True)
class ImageBuffer:
    width: int
    height: int
    channels: int
    data: np.ndarray  # (H, W, C) float32
    depth: np.ndarray  # (H, W) float64, inf where empty
    mask: np.ndarray  # (H, W) float32 coverage in {0, 1}


@dataclass(frozen=True)
class TexelChart:
    """Texel -> (UV triangle, barycentric) assignment for one atlas layout.

    Depends only on the UV coordinates, not on the pose, so it is computed
    once per template and resolution and reused for every attribute raster.
    """

    resolution: int
    face: np.ndarray  # (R, R) int32, -1 where uncovered
    bary: np.ndarray  # (R, R, 3) float64
    mask: np.ndarray  # (R, R) bool

    @property
    def covered(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.mask)


_chart_cache: dict[tuple[int, int], TexelChart] = {}


def get_texel_chart(t: SkinnedTemplate, resolution: int) -> TexelChart:
    key = (id(t), resolution)
    chart = _chart_cache.get(key)
    if chart is None:
        chart = build_texel_chart(t, resolution)
        if len(_chart_cache) > 32:
            _chart_cache.clear()
        _chart_cache[key] = chart
    return chart


def build_texel_chart(t: SkinnedTemplate, resolution: int) -> TexelChart:
    r = resolution
    face = np.full((r, r), -1, dtype=np.int32)
    bary = np.zeros((r, r, 3))
    # texel centers in "texel units": center of texel (row, col) is (col, row)
    for f in range(t.triangles.shape[0]):
        p = t.uv_coords[f] * r - 0.5  # (3, 2) corner positions in texel units
        _fill_triangle(p, f, face, bary)
    mask = face >= 0
    if not mask.any():
        raise ValueError("empty UV chart: no texel covered by any triangle")
    return TexelChart(resolution=r, face=face, bary=bary, mask=mask)


def _fill_triangle(p: np.ndarray, face_id: int, face: np.ndarray, bary: np.ndarray) -> None:
    """Scan-convert one 2D triangle over the integer grid; first claim wins."""
    r = face.shape[0]
    area = _cross2(p[1] - p[0], p[2] - p[0])
    if area == 0.0:
        return
    x0 = max(int(np.ceil(p[:, 0].min())), 0)
    x1 = min(int(np.floor(p[:, 0].max())), r - 1)
    y0 = max(int(np.ceil(p[:, 1].min())), 0)
    y1 = min(int(np.floor(p[:, 1].max())), r - 1)
    if x1 < x0 or y1 < y0:
        return
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    pts = np.stack([xs, ys], axis=-1).astype(np.float64)
    sign = 1.0 if area > 0.0 else -1.0
    inside = np.ones(pts.shape[:2], dtype=bool)
    ws = []
    for k in range(3):
        a, b = p[(k + 1) % 3], p[(k + 2) % 3]
        e = sign * ((b[0] - a[0]) * (pts[..., 1] - a[1]) - (b[1] - a[1]) * (pts[..., 0] - a[0]))
        d = sign * (b - a)
        top_left = (d[1] == 0.0 and d[0] > 0.0) or d[1] > 0.0
        inside &= (e > 0.0) | ((e == 0.0) & top_left)
        ws.append(e)
    w = np.stack(ws, axis=-1) / abs(area)
    region = face[y0 : y1 + 1, x0 : x1 + 1]
    claim = inside & (region < 0)
    region[claim] = face_id
    bary[y0 : y1 + 1, x0 : x1 + 1][claim] = w[claim]


def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


# ---------------------------------------------------------------------------
# Attribute rasters

def rasterize_vertex_attribute(
    t: SkinnedTemplate, chart: TexelChart, attr: np.ndarray, kind: str
) -> TexelMap:
    """Barycentric interpolation of a per-vertex (N, C) attribute into texels."""
    attr = np.atleast_2d(attr.T).T if attr.ndim == 1 else attr
    c = attr.shape[1]
    out = np.zeros((chart.resolution, chart.resolution, c))
    rows, cols = chart.covered
    faces = chart.face[rows, cols]
    corners = t.triangles[faces]  # (Q, 3)
    vals = attr[corners]  # (Q, 3, C)
    w = chart.bary[rows, cols]  # (Q, 3)
    out[rows, cols] = np.einsum("qk,qkc->qc", w, vals)
    return TexelMap(chart.resolution, c, out.astype(np.float32), kind)


def rasterize_face_attribute(chart: TexelChart, attr: np.ndarray, kind: str) -> TexelMap:
    """Per-face constant (F, C) attribute written into covered texels."""
    c = attr.shape[1]
    out = np.zeros((chart.resolution, chart.resolution, c))
    rows, cols = chart.covered
    out[rows, cols] = attr[chart.face[rows, cols]]
    return TexelMap(chart.resolution, c, out.astype(np.float32), kind)


def face_normals(t: SkinnedTemplate, positions: np.ndarray) -> np.ndarray:
    """(F, 3) unit face normals of the mesh at the given vertex positions."""
    v0 = positions[t.triangles[:, 0]]
    v1 = positions[t.triangles[:, 1]]
    v2 = positions[t.triangles[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-30)


def vertex_normals(t: SkinnedTemplate, positions: np.ndarray) -> np.ndarray:
    """(N, 3) smooth area-weighted vertex normals."""
    v0 = positions[t.triangles[:, 0]]
    v1 = positions[t.triangles[:, 1]]
    v2 = positions[t.triangles[:, 2]]
    fn = np.cross(v1 - v0, v2 - v0)  # area-weighted (unnormalized)
    acc = np.zeros_like(positions, dtype=np.float64)
    for k in range(3):
        np.add.at(acc, t.triangles[:, k], fn)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norm < 1e-30):
        raise ValueError("vertex with zero-area star: smooth normal undefined")
    return acc / norm


def rasterize_texel_geometry(
    t: SkinnedTemplate,
    world_positions: np.ndarray,
    chart: TexelChart,
    attributes: Iterable[str] = ("position", "face_normal", "mask"),
    vertex_transforms: VertexTransforms | None = None,
    smooth_normal_positions: np.ndarray | None = None,
    deformed_canonical: np.ndarray | None = None,
) -> dict[str, TexelMap]:
    """Rasterize the requested surface attributes into texel space.

    Supported attributes: position, face_normal, smooth_normal, lbs,
    deformed_position, mask. Uncovered texels stay zero and are excluded
    from the mask.
    """
    if world_positions.shape[0] != t.num_vertices:
        raise ValueError("world_positions length must equal vertex count")
    out: dict[str, TexelMap] = {}
    for name in attributes:
        if name == "position":
            out[name] = rasterize_vertex_attribute(t, chart, world_positions, "position")
        elif name == "face_normal":
            out[name] = rasterize_face_attribute(
                chart, face_normals(t, world_positions), "normal"
            )
        elif name == "smooth_normal":
            src = smooth_normal_positions if smooth_normal_positions is not None else world_positions
            out[name] = rasterize_vertex_attribute(
                t, chart, vertex_normals(t, src), "normal"
            )
        elif name == "lbs":
            if vertex_transforms is None:
                raise ValueError("attribute 'lbs' requires vertex_transforms")
            flat = vertex_transforms.per_vertex.reshape(-1, 12)
            out[name] = rasterize_vertex_attribute(t, chart, flat, "lbs_transform")
        elif name == "deformed_position":
            if deformed_canonical is None:
                raise ValueError("attribute 'deformed_position' requires deformed_canonical")
            out[name] = rasterize_vertex_attribute(t, chart, deformed_canonical, "position")
        elif name == "mask":
            out[name] = TexelMap(
                chart.resolution, 1,
                chart.mask.astype(np.float32)[:, :, None], "mask",
            )
        else:
            raise ValueError(f"unknown texel attribute {name!r}")
    return out


def refining_scale_ratios(
    t: SkinnedTemplate, canonical_deformed: np.ndarray, posed: np.ndarray
) -> np.ndarray:
    """Per-vertex refining scales: max edge-stretch ratio, clamped >= 1."""
    if t.edges is None or t.vertex_edges is None:
        raise ValueError("adjacency not built (call build_adjacency first)")
    i, j = t.edges[:, 0], t.edges[:, 1]
    len_can = np.linalg.norm(canonical_deformed[i] - canonical_deformed[j], axis=1)
    len_posed = np.linalg.norm(posed[i] - posed[j], axis=1)
    if np.any(len_can <= 0.0):
        raise ValueError("zero-length canonical edge")
    ratio = len_posed / len_can
    s = np.ones(t.num_vertices)
    for v in range(t.num_vertices):
        incident = t.vertex_edges[v]
        if incident.size:
            s[v] = max(float(ratio[incident].max()), 1.0)
    return s


def render_refining_scale_map(
    t: SkinnedTemplate,
    canonical_deformed: np.ndarray,
    posed: np.ndarray,
    chart: TexelChart,
) -> TexelMap:
    """Rasterized per-vertex refining scales (>= 1 on the valid mask, exactly)."""
    s = refining_scale_ratios(t, canonical_deformed, posed)
    m = rasterize_vertex_attribute(t, chart, s[:, None], "scale_ratio")
    data = m.data.copy()
    rows, cols = chart.covered
    data[rows, cols, 0] = np.maximum(data[rows, cols, 0], 1.0)
    return TexelMap(m.resolution, 1, data, "scale_ratio")


# ---------------------------------------------------------------------------
# Image-space rendering

def project_points(points: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection; pixel (row, col) center maps to coordinate (col, row).

    Returns ((N, 2) xy pixel coordinates, (N,) camera-space depth in meters).
    """
    q = points @ cam.rotation.T + cam.translation
    z = q[:, 2]
    safe_z = np.where(z > 0, z, 1.0)
    x = cam.fx * q[:, 0] / safe_z + cam.cx
    y = cam.fy * q[:, 1] / safe_z + cam.cy
    return np.stack([x, y], axis=1), z


def sample_bilinear(data: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H, W, C) array at (Q, 2) pixel coordinates,
    integer-center convention, border clamped."""
    h, w = data.shape[:2]
    x = np.asarray(xy)[:, 0]
    y = np.asarray(xy)[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    d = data.astype(np.float64)
    return (
        d[y0c, x0c] * ((1 - fx) * (1 - fy))[:, None]
        + d[y0c, x1c] * (fx * (1 - fy))[:, None]
        + d[y1c, x0c] * ((1 - fx) * fy)[:, None]
        + d[y1c, x1c] * (fx * fy)[:, None]
    )


def rasterize_image(
    t: SkinnedTemplate,
    world_positions: np.ndarray,
    cam: Camera,
    texture: TexelMap | None = None,
    flat_color: tuple[float, float, float] = (0.8, 0.8, 0.8),
    near: float = 0.01,
) -> ImageBuffer:
    """Z-buffered perspective rasterization with perspective-correct UVs.

    Triangles with any vertex at or behind the near plane are skipped
    (no clipping). An empty projection yields empty buffers, not an error.
    """
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    uv_buf = np.zeros((h, w, 2))
    cover = np.zeros((h, w), dtype=bool)
    xy, z = project_points(world_positions, cam)

    tris = t.triangles
    for f in range(tris.shape[0]):
        vids = tris[f]
        zf = z[vids]
        if np.any(zf <= near):
            continue
        p = xy[vids]  # (3, 2)
        area = _cross2(p[1] - p[0], p[2] - p[0])
        if area == 0.0:
            continue
        x0 = max(int(np.ceil(p[:, 0].min())), 0)
        x1 = min(int(np.floor(p[:, 0].max())), w - 1)
        y0 = max(int(np.ceil(p[:, 1].min())), 0)
        y1 = min(int(np.floor(p[:, 1].max())), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        pts = np.stack([xs, ys], axis=-1).astype(np.float64)
        sign = 1.0 if area > 0.0 else -1.0
        inside = np.ones(pts.shape[:2], dtype=bool)
        ws = []
        for k in range(3):
            a, b = p[(k + 1) % 3], p[(k + 2) % 3]
            e = sign * ((b[0] - a[0]) * (pts[..., 1] - a[1]) - (b[1] - a[1]) * (pts[..., 0] - a[0]))
            d = sign * (b - a)
            top_left = (d[1] == 0.0 and d[0] > 0.0) or d[1] > 0.0
            inside &= (e > 0.0) | ((e == 0.0) & top_left)
            ws.append(e)
        if not inside.any():
            continue
        bw = np.stack(ws, axis=-1) / abs(area)  # screen-space barycentric
        inv_z = bw @ (1.0 / zf)
        pz = 1.0 / inv_z
        win = depth[y0 : y1 + 1, x0 : x1 + 1]
        passed = inside & (pz < win)
        if not passed.any():
            continue
        # perspective-correct UV
        uvz = t.uv_coords[f] / zf[:, None]  # (3, 2)
        uv = (bw @ uvz) * pz[..., None]
        win[passed] = pz[passed]
        uv_buf[y0 : y1 + 1, x0 : x1 + 1][passed] = uv[passed]
        cover[y0 : y1 + 1, x0 : x1 + 1] |= passed

    color = np.zeros((h, w, 3), dtype=np.float32)
    rows, cols = np.nonzero(cover)
    if rows.size:
        if texture is None:
            color[rows, cols] = np.asarray(flat_color, dtype=np.float32)
        else:
            r = texture.resolution
            tex_xy = uv_buf[rows, cols] * r - 0.5
            color[rows, cols] = sample_bilinear(texture.data, tex_xy).astype(np.float32)
    return ImageBuffer(
        width=w, height=h, channels=3, data=color,
        depth=depth, mask=cover.astype(np.float32),
    )
