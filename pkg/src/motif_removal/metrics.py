"""Image quality metrics. Inputs are unit-range ``(H, W, C)`` arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import ShapeMismatchError, as_plane

PSNR_CAP = 100.0
_MSE_FLOOR = 1e-10

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    pixel_count: int


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare shapes {a.shape} and {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def _psnr_from_mse(mse: float) -> float:
    if mse < _MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0, capped at ``PSNR_CAP`` for near-identical inputs."""
    a, b = _pair(a, b)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)))


def masked_psnr(a, b, mask) -> float:
    """PSNR restricted to pixels where ``mask > 0``; NaN for an empty mask."""
    a, b = _pair(a, b)
    sel = as_plane(mask) > 0
    if sel.shape != a.shape[:2]:
        raise ShapeMismatchError("mask does not match image")
    if not sel.any():
        return float("nan")
    return _psnr_from_mse(float(np.mean((a[sel] - b[sel]) ** 2)))


def _gaussian_window() -> np.ndarray:
    r = SSIM_WIN // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = len(w) // 2
    y = correlate1d(correlate1d(x, w, axis=0, mode="reflect"), w, axis=1, mode="reflect")
    return y[r:-r, r:-r]


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM per channel over all fully-contained 11x11 Gaussian windows.

    Returns an ``(H - 10, W - 10, C)`` array; pixel ``(i, j)`` of the map is the
    window centred at ``(i + 5, j + 5)`` of the inputs.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"SSIM needs images at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape[:2]}")
    w = _gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    out = np.empty((a.shape[0] - SSIM_WIN + 1, a.shape[1] - SSIM_WIN + 1, a.shape[2]))
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        out[..., c] = num / den
    return out


def ssim(a, b) -> float:
    return float(np.mean(ssim_map(a, b)))


def masked_ssim(a, b, mask) -> float:
    """Mean local SSIM over windows centred on mask pixels; NaN if there are none."""
    m = ssim_map(a, b)
    r = SSIM_WIN // 2
    sel = (as_plane(mask) > 0)[r:-r, r:-r]
    if not sel.any():
        return float("nan")
    return float(np.mean(m[sel]))


def mask_iou(pred, target) -> float:
    """IoU of two binary masks; two empty masks count as a perfect match."""
    p = as_plane(pred) > 0
    t = as_plane(target) > 0
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def report(a, b) -> MetricReport:
    a = np.asarray(a)
    return MetricReport(psnr(a, b), ssim(a, b), int(a.shape[0] * a.shape[1]))
