"""Pixel-level compositing of motifs over images, plus PNG helpers.

Images are ``(H, W, C)`` float arrays, masks and mattes are ``(H, W)`` float
arrays. Two value ranges are in use: ``"unit"`` ([0, 1], used on disk and for
metrics) and ``"signed"`` ([-1, 1], what the network consumes and emits).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# Matte values above this are refused by recover_latent.
SINGULAR_EPS = 1e-3

RANGES = {"unit": (0.0, 1.0), "signed": (-1.0, 1.0)}


class ShapeMismatchError(ValueError):
    pass


class SingularMatteError(ValueError):
    """Raised when a matte is too close to fully opaque to be inverted."""


def to_unit(x):
    return (x + 1.0) / 2.0


def to_signed(x):
    return x * 2.0 - 1.0


def check_range(x: np.ndarray, range_tag: str = "unit", atol: float = 0.0) -> None:
    lo, hi = RANGES[range_tag]
    if x.size and (x.min() < lo - atol or x.max() > hi + atol):
        raise ValueError(
            f"values [{x.min():.4g}, {x.max():.4g}] outside {range_tag} range [{lo}, {hi}]"
        )


def as_plane(m: np.ndarray) -> np.ndarray:
    """Accept ``(H, W)`` or ``(H, W, 1)`` mask/matte arrays."""
    m = np.asarray(m)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise ShapeMismatchError(f"expected a single-channel plane, got shape {m.shape}")
    return m


def _float_dtype(*arrays) -> np.dtype:
    return np.result_type(*[np.asarray(a).dtype for a in arrays], np.float32)


def _check_spatial(image: np.ndarray, *others: np.ndarray) -> None:
    for other in others:
        if other.shape[:2] != image.shape[:2]:
            raise ShapeMismatchError(
                f"spatial shape {other.shape[:2]} does not match {image.shape[:2]}"
            )


def embed_motif(im: np.ndarray, vm: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Matte ``vm`` onto ``im``: ``alpha * vm + (1 - alpha) * im``."""
    alpha = as_plane(alpha)
    if im.shape != vm.shape:
        raise ShapeMismatchError(f"image {im.shape} and motif {vm.shape} differ")
    _check_spatial(im, alpha)
    if alpha.size and (alpha.min() < 0.0 or alpha.max() > 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    dtype = _float_dtype(im, vm, alpha)
    a = alpha.astype(dtype)[..., None]
    return a * vm.astype(dtype) + (1.0 - a) * im.astype(dtype)


def recover_latent(
    cr: np.ndarray, vm: np.ndarray, alpha: np.ndarray, range_tag: str = "unit"
) -> np.ndarray:
    """Invert :func:`embed_motif` given the motif and its matte.

    Only defined for semi-transparent mattes; any ``alpha > 1 - SINGULAR_EPS``
    raises :class:`SingularMatteError`. The result is clipped to ``range_tag``.
    """
    alpha = as_plane(alpha)
    if cr.shape != vm.shape:
        raise ShapeMismatchError(f"image {cr.shape} and motif {vm.shape} differ")
    _check_spatial(cr, alpha)
    if alpha.size and alpha.max() > 1.0 - SINGULAR_EPS:
        raise SingularMatteError(
            f"alpha reaches {alpha.max():.6g}; latent image is unrecoverable above "
            f"{1.0 - SINGULAR_EPS}"
        )
    if alpha.size and alpha.min() < 0.0:
        raise ValueError("alpha must be non-negative")
    dtype = _float_dtype(cr, vm, alpha)
    a = alpha.astype(dtype)[..., None]
    im = (cr.astype(dtype) - a * vm.astype(dtype)) / (1.0 - a)
    return np.clip(im, *RANGES[range_tag])


def compose_final(cr: np.ndarray, im_hat: np.ndarray, ma_hat: np.ndarray) -> np.ndarray:
    """Keep ``cr`` outside the estimated mask and take ``im_hat`` inside it."""
    ma_hat = as_plane(ma_hat)
    if cr.shape != im_hat.shape:
        raise ShapeMismatchError(f"input {cr.shape} and estimate {im_hat.shape} differ")
    _check_spatial(cr, ma_hat)
    if ma_hat.size and (ma_hat.min() < 0.0 or ma_hat.max() > 1.0):
        raise ValueError("mask estimate must lie in [0, 1]")
    dtype = _float_dtype(cr, im_hat, ma_hat)
    m = ma_hat.astype(dtype)[..., None]
    return (1.0 - m) * cr.astype(dtype) + m * im_hat.astype(dtype)


def binarize_mask(ma_hat: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(ma_hat) >= threshold).astype(np.float32)


def reflect_pad_to_multiple(x: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflection-pad the bottom/right of ``x`` so both spatial dims divide ``multiple``."""
    h, w = x.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pad, mode="reflect" if min(h, w) > 1 else "edge"), (h, w)


# ---------------------------------------------------------------------------
# PNG I/O. Files are 8-bit; everything in memory is float32 in the unit range.


def quantize(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path, mode: str = "RGB") -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert(mode), dtype=np.float32) / 255.0
    return arr if arr.ndim == 3 else arr[..., None]


def save_image(path, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[..., 0]
    Image.fromarray(quantize(x)).save(Path(path))


def load_plane(path) -> np.ndarray:
    """Load a single-channel PNG as values ``v / 255``."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def save_plane(path, m: np.ndarray) -> None:
    Image.fromarray(quantize(as_plane(m))).save(Path(path))
