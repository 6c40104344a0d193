"""Placing motifs on background images and synthesizing corrupted samples.

Every sample is a pure function of ``(backgrounds, specs, placement, seed,
index)``: each index derives its own child generator, so any subset of
indices can be synthesized independently, in any order, by any worker.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d, map_coordinates

from .imaging import SINGULAR_EPS, embed_motif
from .motifs import FontSet, MotifSpec, RasterBank, generate_motif

log = logging.getLogger(__name__)

MIN_BACKGROUND = 128
# Matte values below one 8-bit step are dropped so that ``ma == (alpha > 0)``
# still holds after the matte is written to disk and read back.
ALPHA_FLOOR = 1.0 / 255.0


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class PlacementParams:
    max_motifs_per_image: int = 10
    scale_range: tuple[int, int] = (16, 96)
    rotation_range: tuple[float, float] = (-30.0, 30.0)
    allow_crop: bool = True
    rng_seed: int = 0
    min_motifs: int = 1

    def __post_init__(self):
        if self.max_motifs_per_image < 1 or not 1 <= self.min_motifs <= self.max_motifs_per_image:
            raise PlacementError("need 1 <= min_motifs <= max_motifs_per_image")
        lo, hi = self.scale_range
        if not 1 <= lo <= hi:
            raise PlacementError(f"bad scale range {self.scale_range}")
        object.__setattr__(self, "scale_range", (int(lo), int(hi)))
        object.__setattr__(self, "rotation_range", tuple(map(float, self.rotation_range)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PlacementParams:
        d = dict(d)
        for k in ("scale_range", "rotation_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class PlacedMotif:
    """A rendered motif tile plus where and how strongly it lands in the image.

    ``transform`` is a 2x3 affine mapping tile ``(x, y)`` pixel coordinates to
    image coordinates. Tiles are rendered at their final pixel size, so the
    linear part is a pure rotation.
    """

    spec: MotifSpec
    vm: np.ndarray
    support: np.ndarray
    transform: np.ndarray
    opacity: float
    angle: float
    size: int

    def bounds(self) -> tuple[float, float, float, float]:
        """Image-space bounding box ``(x0, y0, x1, y1)`` of the placed tile."""
        h, w = self.support.shape
        corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5], [w - 0.5, h - 0.5]])
        pts = corners @ self.transform[:, :2].T + self.transform[:, 2]
        return (*pts.min(axis=0), *pts.max(axis=0))


@dataclass
class CorruptedSample:
    """Corrupted image plus every ground-truth plane used to make it.

    ``cr``, ``im``, ``vm`` are ``(H, W, 3)``; ``ma`` and ``alpha`` are ``(H, W)``.
    """

    cr: np.ndarray
    im: np.ndarray
    vm: np.ndarray
    ma: np.ndarray
    alpha: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cr.shape[:2]

    def planes(self) -> dict[str, np.ndarray]:
        return {"cr": self.cr, "im": self.im, "vm": self.vm, "ma": self.ma, "alpha": self.alpha}


# ---------------------------------------------------------------------------
# Layout


def _rotation(angle_deg: float) -> np.ndarray:
    t = np.deg2rad(angle_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s], [-s, c]])


def _tile_size(spec: MotifSpec, size: int, rng: np.random.Generator):
    if spec.kind == "shape":
        return (max(2, round(size * rng.uniform(0.3, 1.0))), size)
    return size


def layout_motifs(
    image_size: tuple[int, int],
    specs: Sequence[MotifSpec],
    params: PlacementParams,
    rng=None,
    count: int | None = None,
    fonts: FontSet | None = None,
    rasters: RasterBank | None = None,
) -> list[PlacedMotif]:
    """Render and place ``count`` motifs (random in the configured range if None)."""
    rng = np.random.default_rng(params.rng_seed if rng is None else rng)
    if not specs:
        raise PlacementError("no motif specs given")
    height, width = image_size
    lo, hi = params.scale_range
    if min(height, width) < lo:
        raise PlacementError(f"image {image_size} is smaller than the minimum motif scale {lo}")
    if count is None:
        count = int(rng.integers(params.min_motifs, params.max_motifs_per_image + 1))
    if not 1 <= count <= params.max_motifs_per_image:
        raise PlacementError(f"count must be in [1, {params.max_motifs_per_image}], got {count}")
    fonts = fonts or FontSet()

    placed = []
    for _ in range(count):
        spec = specs[int(rng.integers(len(specs)))]
        size = int(rng.integers(lo, hi + 1))
        r0, r1 = params.rotation_range
        angle = float(rng.uniform(r0, r1)) if r1 > r0 else r0
        opacity = 1.0 if spec.opaque else float(rng.uniform(*spec.opacity_range))
        motif_seed = int(rng.integers(2**63))
        rot = _rotation(angle)

        for _attempt in range(8):
            tile = _tile_size(spec, size, np.random.default_rng(motif_seed))
            vm, support = generate_motif(spec, motif_seed, tile, fonts, rasters)
            th, tw = support.shape
            extent = np.abs(rot) @ np.array([tw, th])
            if params.allow_crop or (extent[0] <= width and extent[1] <= height):
                break
            size = max(1, int(size * 0.95 * min(width / extent[0], height / extent[1])))
        else:
            raise PlacementError(f"cannot fit a {spec.kind} motif into {image_size} without cropping")

        if params.allow_crop:
            centre = rng.uniform([0, 0], [width, height])
        else:
            half = extent / 2
            centre = rng.uniform(half - 0.5, np.array([width, height]) - half - 0.5)
        tile_centre = np.array([(tw - 1) / 2, (th - 1) / 2])
        offset = centre - rot @ tile_centre
        if angle == 0.0:
            offset = np.round(offset)
        transform = np.hstack([rot, offset[:, None]])
        placed.append(PlacedMotif(spec, vm, support, transform, opacity, angle, size))
    return placed


# ---------------------------------------------------------------------------
# Matting


def _gaussian_kernel(k: int) -> np.ndarray:
    # sigma rule for a k-tap kernel, same as OpenCV's getGaussianKernel default
    sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
    x = np.arange(k) - (k - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _rasterize(inst: PlacedMotif, image_size, rng):
    """Warp one placed motif into image space.

    Returns ``(alpha, colour, (r0, r1, c0, c1))`` restricted to the bounding
    region, or ``None`` if the motif falls entirely outside the image.
    """
    spec = inst.spec
    height, width = image_size
    margin = int(np.ceil(spec.perturb_max_shift)) + spec.blur_kernel // 2 + 2
    x0, y0, x1, y1 = inst.bounds()
    c0, c1 = max(0, int(np.floor(x0)) - margin), min(width, int(np.ceil(x1)) + margin + 1)
    r0, r1 = max(0, int(np.floor(y0)) - margin), min(height, int(np.ceil(y1)) + margin + 1)
    if c0 >= c1 or r0 >= r1:
        return None

    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    if spec.perturb_max_shift > 0:
        p = spec.perturb_max_shift
        xs = xs + rng.uniform(-p, p, xs.shape)
        ys = ys + rng.uniform(-p, p, ys.shape)
    inv = np.linalg.inv(inst.transform[:, :2])
    pts = np.stack([xs - inst.transform[0, 2], ys - inst.transform[1, 2]])
    u, v = np.tensordot(inv, pts, axes=1)
    coords = np.stack([v, u])

    support = map_coordinates(inst.support, coords, order=1, mode="constant", cval=0.0)
    premult = np.stack(
        [
            map_coordinates(inst.support * inst.vm[..., c], coords, order=1, mode="constant", cval=0.0)
            for c in range(3)
        ],
        axis=-1,
    )
    if spec.blur_kernel:
        w = _gaussian_kernel(spec.blur_kernel)
        support = correlate1d(correlate1d(support, w, 0, mode="constant"), w, 1, mode="constant")
        premult = correlate1d(correlate1d(premult, w, 0, mode="constant"), w, 1, mode="constant")
    support = np.clip(support, 0.0, 1.0)

    colour = np.zeros_like(premult)
    on = support > 0
    colour[on] = np.clip(premult[on] / support[on, None], 0.0, 1.0)

    if spec.opaque:
        alpha = (support >= ALPHA_FLOOR).astype(np.float64)
    else:
        alpha = inst.opacity * support
        if spec.opacity_variance_pct > 0:
            v = spec.opacity_variance_pct / 100.0
            alpha = alpha * (1.0 + rng.uniform(-v, v, alpha.shape))
        alpha = np.minimum(alpha, 1.0 - SINGULAR_EPS)
        alpha[alpha < ALPHA_FLOOR] = 0.0
    return alpha, colour, (r0, r1, c0, c1)


def synthesize_sample(im: np.ndarray, placed: Sequence[PlacedMotif], rng=None) -> CorruptedSample:
    """Matte the placed motifs onto ``im`` back to front.

    Overlapping motifs are accumulated with the "over" operator, so the stored
    ``(vm, alpha)`` pair reproduces the layered result with a single
    :func:`embed_motif`, and ``alpha`` is ``1 - prod(1 - alpha_k)``.
    """
    rng = np.random.default_rng(rng)
    im = np.asarray(im, dtype=np.float64)
    if im.ndim != 3 or im.shape[2] != 3:
        raise ValueError(f"background must be (H, W, 3), got {im.shape}")
    height, width = im.shape[:2]
    if min(height, width) < MIN_BACKGROUND:
        raise ValueError(f"background must be at least {MIN_BACKGROUND}x{MIN_BACKGROUND}")

    premult = np.zeros_like(im)
    acc = np.zeros((height, width))
    opaque = np.zeros((height, width), dtype=bool)
    for inst in placed:
        out = _rasterize(inst, (height, width), rng)
        if out is None:
            continue
        a, colour, (r0, r1, c0, c1) = out
        region = (slice(r0, r1), slice(c0, c1))
        premult[region] = a[..., None] * colour + (1.0 - a[..., None]) * premult[region]
        acc[region] = a + (1.0 - a) * acc[region]
        if inst.spec.opaque:
            opaque[region] |= a > 0

    alpha = np.where(opaque, 1.0, np.minimum(acc, 1.0 - SINGULAR_EPS))
    vm = np.zeros_like(im)
    on = acc > 0
    vm[on] = np.clip(premult[on] / acc[on, None], 0.0, 1.0)
    return CorruptedSample(
        cr=embed_motif(im, vm, alpha),
        im=im,
        vm=vm,
        ma=(alpha > 0).astype(np.float64),
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Patches


def crop(sample: CorruptedSample, top: int, left: int, size: int | tuple[int, int]) -> CorruptedSample:
    h, w = (size, size) if isinstance(size, (int, np.integer)) else size
    height, width = sample.shape
    if h > height or w > width:
        raise ValueError(f"patch {h}x{w} exceeds image {height}x{width}")
    if not (0 <= top <= height - h and 0 <= left <= width - w):
        raise ValueError(f"patch at ({top}, {left}) falls outside the image")
    window = (slice(top, top + h), slice(left, left + w))
    prov = dict(sample.provenance)
    t0, l0 = prov.get("offset", (0, 0))
    prov["offset"] = (t0 + top, l0 + left)
    return CorruptedSample(**{k: v[window] for k, v in sample.planes().items()}, provenance=prov)


def sample_patch(sample: CorruptedSample, size: int, rng=None) -> CorruptedSample:
    """Crop all planes of ``sample`` with one uniformly random ``size`` window."""
    rng = np.random.default_rng(rng)
    height, width = sample.shape
    if size > height or size > width:
        raise ValueError(f"patch size {size} exceeds image {height}x{width}")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return crop(sample, top, left, size)


# ---------------------------------------------------------------------------
# Datasets


def fit_background(bg: np.ndarray, size: int, rng) -> np.ndarray:
    """Random ``size`` x ``size`` crop after a random downscale (or a needed upscale)."""
    rng = np.random.default_rng(rng)
    h, w = bg.shape[:2]
    short = min(h, w)
    target = short if short <= size else int(rng.integers(size, short + 1))
    if target != short or short < size:
        target = max(target, size)
        scale = target / short
        nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
        img = Image.fromarray(np.clip(np.rint(bg * 255), 0, 255).astype(np.uint8))
        bg = np.asarray(img.resize((nw, nh), Image.Resampling.BICUBIC), dtype=np.float64) / 255.0
        h, w = nh, nw
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return np.asarray(bg[top : top + size, left : left + size], dtype=np.float64)


def child_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass
class SynthesisJob:
    """Everything needed to synthesize any index of a dataset."""

    backgrounds: Sequence[np.ndarray]
    specs: Sequence[MotifSpec]
    placement: PlacementParams
    image_size: int = 512
    fonts: FontSet | None = None
    rasters: RasterBank | None = None

    def __post_init__(self):
        if not self.backgrounds:
            raise ValueError("no background images")
        if self.image_size < MIN_BACKGROUND:
            raise ValueError(f"image size must be at least {MIN_BACKGROUND}")

    @property
    def seed(self) -> int:
        return self.placement.rng_seed

    def sample(self, index: int) -> CorruptedSample:
        rng = child_rng(self.seed, index)
        bg_index = int(rng.integers(len(self.backgrounds)))
        im = fit_background(self.backgrounds[bg_index], self.image_size, rng)
        placed = layout_motifs(
            im.shape[:2], self.specs, self.placement, rng, fonts=self.fonts, rasters=self.rasters
        )
        sample = synthesize_sample(im, placed, rng)
        sample.provenance = {
            "index": index,
            "seed": self.seed,
            "background": bg_index,
            "motifs": len(placed),
        }
        return sample

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "image_size": self.image_size,
            "specs": [s.to_dict() for s in self.specs],
            "placement": self.placement.to_dict(),
        }


_worker_job: SynthesisJob | None = None


def _init_worker(job: SynthesisJob) -> None:
    global _worker_job
    _worker_job = job


def _run_index(index: int) -> CorruptedSample:
    return _worker_job.sample(index)


def synthesize_dataset(job: SynthesisJob, count: int, workers: int = 1, start: int = 0):
    """Yield samples ``start .. start + count - 1`` in index order."""
    indices = range(start, start + count)
    if workers <= 1:
        for i in indices:
            yield job.sample(i)
        return
    with ProcessPoolExecutor(
        workers, mp_context=get_context("fork"), initializer=_init_worker, initargs=(job,)
    ) as pool:
        yield from pool.map(_run_index, indices, chunksize=4)


def with_seed(params: PlacementParams, seed: int) -> PlacementParams:
    return replace(params, rng_seed=int(seed))
