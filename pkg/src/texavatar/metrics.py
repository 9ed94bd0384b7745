"""Image-space losses and metrics: L1, SSIM, PSNR, and the Gaussian
displacement regularizer. PSNR uses peak 1.0; SSIM uses the standard
11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate

from .gaussians import GaussianParamMap

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PSNR_INF_SENTINEL = "inf"


@dataclass(frozen=True)
class MetricReport:
    psnr: float  # dB, math.inf for identical images
    ssim: float
    l1: float
    per_view: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        def enc(x):
            return PSNR_INF_SENTINEL if x == math.inf else x

        doc = {
            "psnr": enc(self.psnr),
            "ssim": self.ssim,
            "l1": self.l1,
            "per_view": [
                {k: enc(v) if k == "psnr" else v for k, v in row.items()}
                for row in self.per_view
            ],
        }
        return json.dumps(doc, indent=1)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimension mismatch: {a.shape} vs {b.shape}")


def l1(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute per-channel difference over (masked) pixels."""
    _check_dims(a, b)
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    if mask is None:
        return float(diff.mean())
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[:2]:
        raise ValueError("mask dimensions do not match image")
    sel = diff[m]
    if sel.size == 0:
        return 0.0
    return float(sel.mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB; +inf for identical images."""
    _check_dims(a, b)
    mse = float(
        ((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2).mean()
    )
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _ssim_kernel()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM, per-channel averaged, dynamic range 1.0."""
    _check_dims(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx = correlate(x, _KERNEL, mode="reflect")
        my = correlate(y, _KERNEL, mode="reflect")
        mxx = correlate(x * x, _KERNEL, mode="reflect")
        myy = correlate(y * y, _KERNEL, mode="reflect")
        mxy = correlate(x * y, _KERNEL, mode="reflect")
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(float((num / den).mean()))
    return float(np.mean(vals))


def displacement_reg(params: GaussianParamMap) -> float:
    """Squared L2 norm of the displacement channels over the valid mask."""
    d = params.displacement[params.mask].astype(np.float64)
    return float((d**2).sum())


def report(rendered: list[np.ndarray], truth: list[np.ndarray],
           masks: list[np.ndarray] | None = None) -> MetricReport:
    """Aggregate full-frame metrics over views, with a per-view breakdown
    (full-frame and foreground-masked L1 when masks are given)."""
    per_view = []
    for i, (r, t) in enumerate(zip(rendered, truth)):
        row = {"view": i, "psnr": psnr(r, t), "ssim": ssim(r, t), "l1": l1(r, t)}
        if masks is not None:
            row["l1_foreground"] = l1(r, t, masks[i] > 0.5)
        per_view.append(row)
    finite = [row["psnr"] for row in per_view if row["psnr"] != math.inf]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    return MetricReport(
        psnr=mean_psnr,
        ssim=float(np.mean([row["ssim"] for row in per_view])),
        l1=float(np.mean([row["l1"] for row in per_view])),
        per_view=per_view,
    )
