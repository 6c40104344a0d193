"""Motif specifications and rasterization of single motif tiles.

A tile is a pair ``(vm, support)``: ``vm`` is an ``(h, w, 3)`` colour layer in
[0, 1] and ``support`` an ``(h, w)`` coverage plane in [0, 1]. Shapes produce
binary support; glyph and emblem edges are anti-aliased and may be fractional.
"""

from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image, ImageDraw, ImageFont

KINDS = ("text", "shape", "raster")
SHAPES = ("line", "rectangle", "ellipse")
COLOR_MODES = (
    "random-color",
    "light-with-dark-border",
    "white",
    "raster-native",
    "random-gray",
    "black",
)

LIGHT_RANGE = (0.7, 1.0)
DARK_RANGE = (0.0, 0.3)
_SUPERSAMPLE = 4


class MotifError(ValueError):
    pass


@dataclass(frozen=True)
class MotifSpec:
    """How one class of motifs looks and how strongly it is blended in.

    ``content`` is the glyph string (text), shape name (shape) or raster id
    (raster); ``None`` draws a fresh random choice for every motif.
    """

    kind: str = "text"
    content: str | None = None
    color_mode: str = "random-color"
    opacity_range: tuple[float, float] = (0.3, 0.7)
    opacity_variance_pct: float = 0.0
    perturb_max_shift: float = 0.0
    blur_kernel: int = 0
    opaque: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MotifError(f"unknown motif kind {self.kind!r}")
        if self.color_mode not in COLOR_MODES:
            raise MotifError(f"unknown color mode {self.color_mode!r}")
        if self.kind == "shape" and self.content is not None and self.content not in SHAPES:
            raise MotifError(f"unknown shape {self.content!r}")
        if self.opaque:
            object.__setattr__(self, "opacity_range", (1.0, 1.0))
        else:
            lo, hi = map(float, self.opacity_range)
            if not 0.0 < lo < hi < 1.0:
                raise MotifError(f"opacity range must satisfy 0 < lo < hi < 1, got {(lo, hi)}")
            object.__setattr__(self, "opacity_range", (lo, hi))
        if self.opacity_variance_pct < 0 or self.perturb_max_shift < 0:
            raise MotifError("variance and perturbation must be non-negative")
        if self.blur_kernel < 0 or (self.blur_kernel and self.blur_kernel % 2 == 0):
            raise MotifError("blur kernel must be 0 or an odd positive integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MotifSpec:
        d = dict(d)
        if "opacity_range" in d:
            d["opacity_range"] = tuple(d["opacity_range"])
        return cls(**d)


# Motif classes used for training sets. ``inpainting`` is the opaque black-text
# regime; ``watermark`` is blurred white text.
PRESETS: dict[str, MotifSpec] = {
    "text_color": MotifSpec("text", color_mode="random-color", opacity_range=(0.3, 0.7)),
    "text_gray": MotifSpec(
        "text",
        color_mode="light-with-dark-border",
        opacity_range=(0.3, 0.7),
        opacity_variance_pct=10.0,
        perturb_max_shift=1.0,
    ),
    "emoji": MotifSpec(
        "raster",
        color_mode="raster-native",
        opacity_range=(0.4, 0.6),
        opacity_variance_pct=10.0,
        perturb_max_shift=1.0,
    ),
    "shapes": MotifSpec("shape", color_mode="random-gray", opacity_range=(0.2, 0.9)),
    "watermark": MotifSpec("text", color_mode="white", opacity_range=(0.2, 0.7), blur_kernel=3),
    "inpainting": MotifSpec("text", color_mode="black", opaque=True),
}


# ---------------------------------------------------------------------------
# Registries


def _default_font_paths() -> list[Path]:
    ttf = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    names = [
        "DejaVuSans.ttf",
        "DejaVuSans-Bold.ttf",
        "DejaVuSans-Oblique.ttf",
        "DejaVuSerif.ttf",
        "DejaVuSerif-Bold.ttf",
        "DejaVuSerif-Italic.ttf",
        "DejaVuSansMono.ttf",
        "DejaVuSansMono-Bold.ttf",
    ]
    return [ttf / n for n in names if (ttf / n).exists()]


@dataclass
class FontSet:
    paths: list[Path] = field(default_factory=_default_font_paths)

    def __post_init__(self):
        self.paths = [Path(p) for p in self.paths]
        missing = [p for p in self.paths if not p.exists()]
        if missing:
            raise MotifError(f"font files not found: {missing}")

    def load(self, index: int, size: int) -> ImageFont.FreeTypeFont:
        if not self.paths:
            raise MotifError("no fonts registered")
        return _truetype(str(self.paths[index]), size)


@lru_cache(maxsize=256)
def _truetype(path: str, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path, size)


class RasterBank:
    """Named RGBA emblems (emoji, logos) that raster motifs are drawn from."""

    def __init__(self):
        self._items: dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self._items)

    def ids(self) -> list[str]:
        return sorted(self._items)

    def register(self, raster_id: str, rgba: np.ndarray) -> None:
        rgba = np.asarray(rgba, dtype=np.float32)
        if rgba.ndim != 3 or rgba.shape[2] != 4:
            raise MotifError("raster must be an (h, w, 4) RGBA array")
        self._items[raster_id] = rgba

    def register_directory(self, root) -> None:
        """Register every PNG/JPEG under ``root``, keyed by file stem.

        Images without an alpha channel treat near-white pixels as transparent.
        """
        root = Path(root)
        files = sorted(
            p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not files:
            raise MotifError(f"no raster images in {root}")
        for p in files:
            with Image.open(p) as img:
                has_alpha = "A" in img.getbands() or "transparency" in img.info
                rgba = np.asarray(img.convert("RGBA"), dtype=np.float32) / 255.0
            if not has_alpha:
                rgba[..., 3] = (rgba[..., :3].min(axis=2) < 0.98).astype(np.float32)
            self.register(p.stem, rgba)

    def get(self, raster_id: str) -> np.ndarray:
        try:
            return self._items[raster_id]
        except KeyError:
            raise MotifError(f"unregistered raster id {raster_id!r}") from None


def procedural_emblems(count: int = 32, seed: int = 0, size: int = 96) -> RasterBank:
    """Build a bank of simple emoji-like RGBA emblems (faces, stars, rings, badges)."""
    rng = np.random.default_rng(seed)
    bank = RasterBank()
    s = size * _SUPERSAMPLE
    for i in range(count):
        img = Image.new("RGBA", (s, s), (0, 0, 0, 0))
        draw = ImageDraw.Draw(img)
        fill = tuple(int(v) for v in rng.integers(40, 256, 3)) + (255,)
        accent = tuple(int(v) for v in rng.integers(0, 120, 3)) + (255,)
        style = i % 4
        m = s // 16
        if style == 0:  # face
            draw.ellipse([m, m, s - m, s - m], fill=fill, outline=accent, width=m)
            e = s // 9
            for cx in (s * 0.35, s * 0.65):
                draw.ellipse([cx - e / 2, s * 0.35 - e / 2, cx + e / 2, s * 0.35 + e / 2], fill=accent)
            draw.arc([s * 0.28, s * 0.35, s * 0.72, s * 0.75], 20, 160, fill=accent, width=m)
        elif style == 1:  # star
            n = int(rng.integers(5, 9))
            ang = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False) + rng.uniform(0, np.pi)
            rad = np.where(np.arange(2 * n) % 2 == 0, s / 2 - m, s / 4)
            pts = [(s / 2 + r * np.cos(a), s / 2 + r * np.sin(a)) for r, a in zip(rad, ang)]
            draw.polygon(pts, fill=fill, outline=accent)
        elif style == 2:  # ring with dot
            draw.ellipse([m, m, s - m, s - m], fill=fill)
            draw.ellipse([s / 4, s / 4, 3 * s / 4, 3 * s / 4], fill=(0, 0, 0, 0))
            draw.ellipse([0.4 * s, 0.4 * s, 0.6 * s, 0.6 * s], fill=accent)
        else:  # badge: rounded square with a glyph-like bar
            draw.rounded_rectangle([m, m, s - m, s - m], radius=s // 6, fill=fill)
            draw.rectangle([s * 0.3, s * 0.45, s * 0.7, s * 0.55], fill=accent)
            draw.rectangle([s * 0.45, s * 0.3, s * 0.55, s * 0.7], fill=accent)
        img = img.resize((size, size), Image.Resampling.BOX)
        bank.register(f"emblem_{i:03d}", np.asarray(img, dtype=np.float32) / 255.0)
    return bank


# ---------------------------------------------------------------------------
# Rasterization


def random_word(rng: np.random.Generator, min_len: int = 3, max_len: int = 9) -> str:
    alphabet = string.ascii_letters + string.digits
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))


def _solid_color(mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "random-color":
        return rng.uniform(0.0, 1.0, 3)
    if mode == "random-gray":
        return np.full(3, rng.uniform(0.0, 1.0))
    if mode == "white":
        return np.ones(3)
    if mode == "black":
        return np.zeros(3)
    if mode == "light-with-dark-border":
        return np.full(3, rng.uniform(*LIGHT_RANGE))
    raise MotifError(f"color mode {mode!r} needs a raster motif")


def _to_u8(c: np.ndarray) -> tuple[int, int, int]:
    return tuple(int(round(v * 255)) for v in c)


def _render_text(spec, rng, size, fonts):
    text = spec.content if spec.content is not None else random_word(rng)
    if not text.strip():
        raise MotifError("empty glyph string")
    font = fonts.load(int(rng.integers(len(fonts.paths))), max(4, int(size)))
    bordered = spec.color_mode == "light-with-dark-border"
    stroke = 1 if bordered else 0
    left, top, right, bottom = font.getbbox(text, stroke_width=stroke)
    w, h = right - left + 2, bottom - top + 2
    origin = (1 - left, 1 - top)

    cover = Image.new("L", (w, h), 0)
    ImageDraw.Draw(cover).text(origin, text, fill=255, font=font, stroke_width=stroke, stroke_fill=255)
    support = np.asarray(cover, dtype=np.float64) / 255.0

    fill = _solid_color(spec.color_mode, rng)
    if bordered:
        dark = np.full(3, rng.uniform(*DARK_RANGE))
        layer = Image.new("RGB", (w, h), _to_u8(dark))
        ImageDraw.Draw(layer).text(
            origin, text, fill=_to_u8(fill), font=font, stroke_width=stroke, stroke_fill=_to_u8(dark)
        )
        vm = np.asarray(layer, dtype=np.float64) / 255.0
    else:
        vm = np.broadcast_to(fill, (h, w, 3)).copy()
    return vm, support


def _render_shape(spec, rng, size):
    h, w = size
    shape = spec.content if spec.content is not None else SHAPES[int(rng.integers(len(SHAPES)))]
    if shape == "rectangle":
        support = np.ones((h, w))
    elif shape == "ellipse":
        s = _SUPERSAMPLE
        img = Image.new("L", (w * s, h * s), 0)
        ImageDraw.Draw(img).ellipse([0, 0, w * s - 1, h * s - 1], fill=255)
        cover = np.asarray(img.resize((w, h), Image.Resampling.BOX), dtype=np.float64) / 255.0
        support = (cover >= 0.5).astype(np.float64)
    else:  # line: a bar across the tile; orientation comes from placement
        thickness = int(rng.integers(2, max(3, h // 6 + 1)))
        support = np.ones((thickness, w))
        h = thickness
    vm = np.broadcast_to(_solid_color(spec.color_mode, rng), (h, w, 3)).copy()
    return vm, support


def _render_raster(spec, rng, size, rasters):
    if rasters is None or len(rasters) == 0:
        raise MotifError("raster motifs need a registered raster bank")
    rid = spec.content if spec.content is not None else rasters.ids()[int(rng.integers(len(rasters)))]
    rgba = rasters.get(rid)
    h0, w0 = rgba.shape[:2]
    scale = max(size) / max(h0, w0)
    h, w = max(1, round(h0 * scale)), max(1, round(w0 * scale))
    img = Image.fromarray((rgba * 255).round().astype(np.uint8))
    rgba = np.asarray(img.resize((w, h), Image.Resampling.LANCZOS), dtype=np.float64) / 255.0
    support = rgba[..., 3]
    if spec.color_mode == "raster-native":
        vm = rgba[..., :3].copy()
    else:
        vm = np.broadcast_to(_solid_color(spec.color_mode, rng), (h, w, 3)).copy()
    return vm, support


def generate_motif(
    spec: MotifSpec,
    rng=None,
    size: int | tuple[int, int] = 48,
    fonts: FontSet | None = None,
    rasters: RasterBank | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one motif tile.

    ``size`` is the font size in pixels for text, and the tile extent
    ``(h, w)`` (or a square side) for shapes and rasters; rasters keep their
    aspect ratio with the longer side equal to ``max(size)``.
    """
    rng = np.random.default_rng(rng)
    if isinstance(size, (int, np.integer)):
        size = (int(size), int(size))
    if min(size) < 1:
        raise MotifError(f"motif size must be positive, got {size}")
    if spec.kind == "text":
        vm, support = _render_text(spec, rng, size[0], fonts or FontSet())
    elif spec.kind == "shape":
        vm, support = _render_shape(spec, rng, size)
    else:
        vm, support = _render_raster(spec, rng, size, rasters)
    vm = np.where(support[..., None] > 0, vm, 0.0)
    return vm, support
