"""Background image sources: any directory of photos, or a small bundled set."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .synth import fit_background

EXTENSIONS = (".png", ".jpg", ".jpeg")

# Photographs shipped with scikit-image, split so that test crops never come
# from a photo seen in training.
TRAIN_PHOTOS = (
    "astronaut",
    "chelsea",
    "coffee",
    "immunohistochemistry",
    "hubble_deep_field",
    "camera",
    "brick",
    "grass",
    "moon",
    "stereo_motorcycle",
)
TEST_PHOTOS = ("rocket", "retina", "coins", "gravel")


def load_backgrounds(directory) -> list[np.ndarray]:
    """Load every PNG/JPEG in ``directory`` (sorted by name) as RGB float arrays."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"background directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in EXTENSIONS)
    if not files:
        raise FileNotFoundError(f"no PNG/JPEG images in {directory}")
    out = []
    for p in files:
        with Image.open(p) as img:
            out.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
    return out


def _rgb(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.uint8:
        x = (x / x.max() * 255).astype(np.uint8)
    if x.ndim == 2:
        x = np.repeat(x[..., None], 3, axis=2)
    return x[..., :3].astype(np.float32) / 255.0


def builtin_photos(names=TRAIN_PHOTOS + TEST_PHOTOS) -> list[np.ndarray]:
    from skimage import data

    out = []
    for name in names:
        img = getattr(data, name)()
        if isinstance(img, tuple):  # stereo pairs
            img = img[0]
        out.append(_rgb(img))
    return out


def photo_crops(photos, count: int, size: int, seed: int) -> list[np.ndarray]:
    """``count`` random ``size`` x ``size`` crops, cycling through ``photos``."""
    rng = np.random.default_rng(seed)
    return [fit_background(photos[i % len(photos)], size, rng).astype(np.float32) for i in range(count)]
