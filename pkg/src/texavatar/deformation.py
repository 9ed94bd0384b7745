"""Coarse geometry recovery.

The total geometry loss is
    L = L_chamfer + lam_lap * L_laplacian + lam_iso * L_isometry + lam_nc * L_normal
with Chamfer evaluated on the posed deformed vertices against a target point
cloud, the Laplacian term on the posed mesh, and the isometry / normal
consistency terms on the deformed canonical mesh.

Forward evaluators are plain numpy; the fitted path evaluates the same loss in
float64 torch and differentiates it through the bilinear deformation-map
lookup and the LBS transform, which keeps the gradient exact (reverse-mode)
while the finite-difference oracle in the tests stays fully independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
from scipy.spatial import cKDTree

from .kinematics import lbs_transforms
from .raster import vertex_normals
from .scene import MotionFrame, PointCloud, SkinnedTemplate, TexelMap
from .unprojection import UnprojectionResult

torch.set_num_threads(1)  # run-to-run determinism over parallel reductions

BRUTE_FORCE_LIMIT = 2000  # below this, exact O(n^2) search is cheap enough


@dataclass(frozen=True)
class GeometryLossWeights:
    lam_lap: float = 1.0
    lam_iso: float = 0.1
    lam_nc: float = 0.001

    def __post_init__(self):
        if min(self.lam_lap, self.lam_iso, self.lam_nc) < 0.0:
            raise ValueError("loss weights must be nonnegative")


# Preset for templates with hands: stiffer edge-length preservation.
HANDS_WEIGHTS = GeometryLossWeights(lam_lap=1.0, lam_iso=0.5, lam_nc=0.001)


class DeformationPredictor(Protocol):
    """Produces a deformation map from the first fused texture and the
    normal map of the posed (root-rotation-stripped) template."""

    def predict(self, fused_first: TexelMap, normal_map: TexelMap) -> TexelMap: ...


# ---------------------------------------------------------------------------
# Forward loss terms (numpy)

def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean squared nearest-neighbor distance, in m^2."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer requires nonempty point clouds")
    pa, pb = a.points, b.points
    if max(len(a), len(b)) <= BRUTE_FORCE_LIMIT:
        d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
        return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())
    ta, tb = cKDTree(pa), cKDTree(pb)
    da, _ = tb.query(pa, k=1)
    db, _ = ta.query(pb, k=1)
    return float((da**2).mean() + (db**2).mean())


def laplacian_loss(t: SkinnedTemplate, posed: np.ndarray) -> float:
    """(1/N) sum of squared uniform Laplacians, delta v = v - mean(one-ring)."""
    _require_adjacency(t)
    total = 0.0
    for i, nbrs in enumerate(t.vertex_neighbors):
        if nbrs.size == 0:
            raise ValueError(f"vertex {i} is isolated: Laplacian undefined")
        d = posed[i] - posed[nbrs].mean(axis=0)
        total += float(d @ d)
    return total / t.num_vertices


def isometry_loss(t: SkinnedTemplate, deformed_canonical: np.ndarray) -> float:
    """Mean (over vertices, then incident edges) squared edge-length change."""
    _require_adjacency(t)
    i, j = t.edges[:, 0], t.edges[:, 1]
    len_can = np.linalg.norm(t.vertices[i] - t.vertices[j], axis=1)
    len_def = np.linalg.norm(deformed_canonical[i] - deformed_canonical[j], axis=1)
    sq = (len_def - len_can) ** 2
    total = 0.0
    for v in range(t.num_vertices):
        incident = t.vertex_edges[v]
        if incident.size:
            total += float(sq[incident].mean())
    return total / t.num_vertices


def normal_consistency_loss(t: SkinnedTemplate, deformed_canonical: np.ndarray) -> float:
    """Mean (over vertices, then neighbors) of (1 - cos(n_i, n_j))^2 on the
    deformed canonical mesh, with smooth area-weighted vertex normals."""
    _require_adjacency(t)
    n = vertex_normals(t, deformed_canonical)
    total = 0.0
    for i, nbrs in enumerate(t.vertex_neighbors):
        if nbrs.size == 0:
            continue
        cos = n[nbrs] @ n[i]
        total += float(((1.0 - cos) ** 2).mean())
    return total / t.num_vertices


def _require_adjacency(t: SkinnedTemplate) -> None:
    if t.edges is None or t.vertex_neighbors is None:
        raise ValueError("adjacency not built (call build_adjacency first)")


# ---------------------------------------------------------------------------
# Differentiable total loss

def _vertex_bilinear_taps(t: SkinnedTemplate, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat texel indices (N, 4) and weights (N, 4) of each vertex's bilinear
    lookup into an R x R deformation map (border clamped, matching
    kinematics.sample_texel_map_at_uv)."""
    r = resolution
    x = t.vertex_uv[:, 0] * r - 0.5
    y = t.vertex_uv[:, 1] * r - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x0c, x1c = np.clip(x0, 0, r - 1), np.clip(x0 + 1, 0, r - 1)
    y0c, y1c = np.clip(y0, 0, r - 1), np.clip(y0 + 1, 0, r - 1)
    idx = np.stack([y0c * r + x0c, y0c * r + x1c, y1c * r + x0c, y1c * r + x1c], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


class _LossContext:
    """Constant tensors reused across optimization steps."""

    def __init__(self, t: SkinnedTemplate, m: MotionFrame, target: PointCloud,
                 weights: GeometryLossWeights, resolution: int):
        _require_adjacency(t)
        self.resolution = resolution
        self.weights = weights
        self.n_v = t.num_vertices
        idx, w = _vertex_bilinear_taps(t, resolution)
        self.tap_idx = torch.from_numpy(idx)
        self.tap_w = torch.from_numpy(w)
        self.v_bar = torch.from_numpy(t.vertices)
        a = lbs_transforms(t, m).per_vertex
        self.a_lin = torch.from_numpy(np.ascontiguousarray(a[:, :, :3]))
        self.a_off = torch.from_numpy(np.ascontiguousarray(a[:, :, 3]))
        self.target = torch.from_numpy(target.points.astype(np.float64))
        self.tris = torch.from_numpy(t.triangles)
        self.edges = torch.from_numpy(t.edges)
        edge_counts = np.array([len(e) for e in t.vertex_edges], dtype=np.float64)
        self.inv_edge_count = torch.from_numpy(
            np.where(edge_counts > 0, 1.0 / np.maximum(edge_counts, 1.0), 0.0)
        )
        i, j = t.edges[:, 0], t.edges[:, 1]
        self.edge_len_can = torch.from_numpy(
            np.linalg.norm(t.vertices[i] - t.vertices[j], axis=1)
        )
        pair_i = np.concatenate([np.full(len(nb), i, dtype=np.int64)
                                 for i, nb in enumerate(t.vertex_neighbors)])
        pair_j = np.concatenate([nb for nb in t.vertex_neighbors])
        nbr_counts = np.array([max(len(nb), 1) for nb in t.vertex_neighbors], dtype=np.float64)
        self.pair_i = torch.from_numpy(pair_i)
        self.pair_j = torch.from_numpy(pair_j)
        self.pair_w = torch.from_numpy(1.0 / nbr_counts[pair_i])
        self.inv_nbr_count = torch.from_numpy(1.0 / nbr_counts)

    def terms(self, d_map: torch.Tensor) -> dict[str, torch.Tensor]:
        n = self.n_v
        flat = d_map.reshape(-1, 3)
        disp = (flat[self.tap_idx] * self.tap_w[:, :, None]).sum(dim=1)
        deformed = self.v_bar + disp
        posed = torch.einsum("nij,nj->ni", self.a_lin, deformed) + self.a_off

        d2 = torch.cdist(posed, self.target) ** 2
        chamf = d2.min(dim=1).values.mean() + d2.min(dim=0).values.mean()

        nbr_mean = torch.zeros_like(posed)
        nbr_mean.index_add_(0, self.pair_i, posed[self.pair_j] * self.pair_w[:, None])
        lap = ((posed - nbr_mean) ** 2).sum(dim=1).mean()

        i, j = self.edges[:, 0], self.edges[:, 1]
        elen = torch.linalg.norm(deformed[i] - deformed[j], dim=1)
        sq = (elen - self.edge_len_can) ** 2
        per_vertex = torch.zeros(n, dtype=torch.float64)
        per_vertex.index_add_(0, i, sq)
        per_vertex.index_add_(0, j, sq)
        iso = (per_vertex * self.inv_edge_count).mean()

        v0 = deformed[self.tris[:, 0]]
        v1 = deformed[self.tris[:, 1]]
        v2 = deformed[self.tris[:, 2]]
        fn = torch.cross(v1 - v0, v2 - v0, dim=1)
        acc = torch.zeros_like(deformed)
        for k in range(3):
            acc.index_add_(0, self.tris[:, k], fn)
        normals = acc / torch.linalg.norm(acc, dim=1, keepdim=True).clamp_min(1e-30)
        cos = (normals[self.pair_i] * normals[self.pair_j]).sum(dim=1)
        nc_per = torch.zeros(n, dtype=torch.float64)
        nc_per.index_add_(0, self.pair_i, (1.0 - cos) ** 2)
        nc = (nc_per * self.inv_nbr_count).mean()

        w = self.weights
        total = chamf + w.lam_lap * lap + w.lam_iso * iso + w.lam_nc * nc
        return {"total": total, "chamfer": chamf, "lap": lap, "iso": iso, "nc": nc}


def geometry_loss_and_grad(
    t: SkinnedTemplate,
    m: MotionFrame,
    d: TexelMap,
    target: PointCloud,
    weights: GeometryLossWeights = GeometryLossWeights(),
    _ctx: "_LossContext | None" = None,
) -> tuple[float, TexelMap]:
    """Total geometry loss and its gradient with respect to every texel of d."""
    if not np.isfinite(d.data).all():
        raise ValueError("deformation map contains non-finite values")
    ctx = _ctx or _LossContext(t, m, target, weights, d.resolution)
    d_t = torch.from_numpy(d.data.astype(np.float64)).requires_grad_(True)
    terms = ctx.terms(d_t)
    terms["total"].backward()
    grad = d_t.grad.numpy().astype(np.float32)
    return float(terms["total"].item()), TexelMap(d.resolution, 3, grad, "deformation")


def geometry_loss_terms(
    t: SkinnedTemplate, m: MotionFrame, d: TexelMap, target: PointCloud,
    weights: GeometryLossWeights = GeometryLossWeights(),
) -> dict[str, float]:
    ctx = _LossContext(t, m, target, weights, d.resolution)
    with torch.no_grad():
        terms = ctx.terms(torch.from_numpy(d.data.astype(np.float64)))
    return {k: float(v.item()) for k, v in terms.items()}


def fit_deformation(
    t: SkinnedTemplate,
    m: MotionFrame,
    first_unprojection: UnprojectionResult,
    target: PointCloud,
    weights: GeometryLossWeights = GeometryLossWeights(),
    steps: int = 300,
    step_size: float = 20.0,
    grad_clip: float = 0.05,
    momentum: float = 0.9,
) -> tuple[TexelMap, list[dict]]:
    """Reference deformation predictor: heavy-ball gradient descent from D = 0.

    Fixed step size with global-norm gradient clipping and momentum; the
    best-loss iterate is returned so the final loss never exceeds the initial
    one. Texels no vertex UV touches keep zero gradient and stay exactly zero.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if len(target) == 0:
        raise ValueError("fitting target point cloud is empty")
    resolution = first_unprojection.fused.resolution
    ctx = _LossContext(t, m, target, weights, resolution)
    d_t = torch.zeros((resolution, resolution, 3), dtype=torch.float64, requires_grad=True)
    velocity = torch.zeros((resolution, resolution, 3), dtype=torch.float64)
    log: list[dict] = []
    best = None
    best_loss = math.inf
    for step in range(steps):
        if d_t.grad is not None:
            d_t.grad.zero_()
        terms = ctx.terms(d_t)
        loss = float(terms["total"].item())
        if not math.isfinite(loss):
            raise RuntimeError(
                f"non-finite geometry loss at step {step}: "
                + ", ".join(f"{k}={float(v.item()):.3g}" for k, v in terms.items())
            )
        log.append({
            "step": step,
            "loss": loss,
            "chamfer": float(terms["chamfer"].item()),
            "lap": float(terms["lap"].item()),
            "iso": float(terms["iso"].item()),
            "nc": float(terms["nc"].item()),
        })
        if loss < best_loss:
            best_loss = loss
            best = d_t.detach().clone()
        terms["total"].backward()
        with torch.no_grad():
            g = d_t.grad
            norm = float(torch.linalg.norm(g))
            if norm > grad_clip:
                g = g * (grad_clip / norm)
            velocity.mul_(momentum).add_(g)
            d_t -= step_size * velocity
    # score the final iterate too
    with torch.no_grad():
        final_loss = float(ctx.terms(d_t)["total"].item())
    if final_loss < best_loss:
        best = d_t.detach().clone()
    d_map = TexelMap(resolution, 3, best.numpy().astype(np.float32), "deformation")
    return d_map, log


@dataclass
class GradientDescentPredictor:
    """DeformationPredictor backed by fit_deformation.

    The fused texture and normal map are accepted (so learned predictors can
    slot in behind the same interface) but the reference implementation
    optimizes directly against the target point cloud.
    """

    template: SkinnedTemplate
    motion: MotionFrame
    target: PointCloud
    weights: GeometryLossWeights = GeometryLossWeights()
    steps: int = 300
    step_size: float = 20.0

    last_log: list[dict] | None = None

    def predict(self, fused_first: TexelMap, normal_map: TexelMap) -> TexelMap:
        del normal_map  # unused by the reference optimizer
        stub = UnprojectionResult(
            fused=fused_first,
            per_view_visibility=[],
            per_view_partial=[],
            coverage_count=TexelMap.zeros(fused_first.resolution, 1, "visibility"),
        )
        d, log = fit_deformation(
            self.template, self.motion, stub,
            self.target, self.weights, self.steps, self.step_size,
        )
        self.last_log = log
        return d
