"""Full-resolution motif removal and evaluation against ground truth."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .imaging import (
    binarize_mask,
    compose_final,
    reflect_pad_to_multiple,
    save_image,
    save_plane,
    to_signed,
    to_unit,
)
from .metrics import mask_iou, masked_psnr, masked_ssim, psnr, ssim
from .network import MULTIPLE, MotifRemovalNet
from .synth import CorruptedSample

PIXEL_BUDGET = 1024 * 1024
TILE = 256
OVERLAP = 32
MISSED_IOU = 0.1
PROTOCOLS = ("whole", "mask", "both")


@dataclass
class Prediction:
    """Raw network outputs in the unit range, cropped to the input size."""

    im_hat: np.ndarray
    ma_hat: np.ndarray | None
    vm_hat: np.ndarray | None


@dataclass
class RemovalResult:
    im_final: np.ndarray
    ma_hat: np.ndarray | None
    vm_hat: np.ndarray | None
    im_hat: np.ndarray
    seconds: float

    def save(self, out_dir) -> None:
        """Write ``final.png``, ``mask.png`` and ``motif.png`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_image(out / "final.png", self.im_final)
        mask = self.ma_hat if self.ma_hat is not None else np.ones(self.im_final.shape[:2])
        save_plane(out / "mask.png", mask)
        motif = self.vm_hat if self.vm_hat is not None else np.zeros_like(self.im_final)
        save_image(out / "motif.png", motif)


@contextmanager
def inference_mode(model: torch.nn.Module):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield model
    finally:
        model.train(was_training)


def _forward(model: MotifRemovalNet, image: np.ndarray) -> dict[str, np.ndarray]:
    """One forward pass on a unit-range HxWx3 image whose dims divide 32."""
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(to_signed(image).transpose(2, 0, 1)))[None].to(dtype)
    out = model(x)
    res = {}
    for name, t in out._asdict().items():
        if t is None:
            continue
        a = t[0].permute(1, 2, 0).to(torch.float64).numpy()
        res[name] = a[..., 0] if name == "mask" else to_unit(a)
    return res


def _ramp(n: int, overlap: int) -> np.ndarray:
    i = np.arange(n)
    return np.minimum(1.0, (np.minimum(i, n - 1 - i) + 1.0) / (overlap + 1.0))


def _starts(n: int, tile: int, stride: int) -> list[int]:
    if n <= tile:
        return [0]
    starts = list(range(0, n - tile, stride))
    return starts + [n - tile]


def _forward_tiled(model, image: np.ndarray, tile: int, overlap: int) -> dict[str, np.ndarray]:
    h, w = image.shape[:2]
    th, tw = min(tile, h), min(tile, w)
    acc: dict[str, np.ndarray] = {}
    weight = np.zeros((h, w))
    for top in _starts(h, th, tile - overlap):
        for left in _starts(w, tw, tile - overlap):
            out = _forward(model, image[top : top + th, left : left + tw])
            wt = np.outer(_ramp(th, overlap), _ramp(tw, overlap))
            for name, a in out.items():
                if name not in acc:
                    acc[name] = np.zeros((h, w) + a.shape[2:])
                acc[name][top : top + th, left : left + tw] += a * (wt if a.ndim == 2 else wt[..., None])
            weight[top : top + th, left : left + tw] += wt
    return {k: v / (weight if v.ndim == 2 else weight[..., None]) for k, v in acc.items()}


def check_tiling(tile: int, overlap: int) -> None:
    if tile % MULTIPLE or not 0 < overlap < tile:
        raise ValueError(f"tile must be a multiple of {MULTIPLE} larger than the overlap")


def predict(
    model: MotifRemovalNet,
    image: np.ndarray,
    pixel_budget: int = PIXEL_BUDGET,
    tile: int = TILE,
    overlap: int = OVERLAP,
    tiled: bool | None = None,
) -> Prediction:
    """Run the network on an image of any size.

    The image is reflection-padded to a multiple of 32 and the outputs are
    cropped back. Above ``pixel_budget`` pixels (or when ``tiled`` is set) the
    padded image is processed in overlapping tiles blended with linear ramps.
    """
    check_tiling(tile, overlap)
    image = np.asarray(image, dtype=np.float32)
    padded, (h, w) = reflect_pad_to_multiple(image, MULTIPLE)
    if tiled is None:
        tiled = padded.shape[0] * padded.shape[1] > pixel_budget
    with inference_mode(model):
        out = _forward_tiled(model, padded, tile, overlap) if tiled else _forward(model, padded)
    out = {k: v[:h, :w] for k, v in out.items()}
    return Prediction(out["image"], out.get("mask"), out.get("motif"))


def remove_motif(model: MotifRemovalNet, image: np.ndarray, hard: bool = False, **kw) -> RemovalResult:
    """Blind removal: blend the corrupted input with the reconstruction through the mask.

    ``hard`` thresholds the estimated mask at 0.5 before blending. A model without
    a mask branch returns its reconstruction unchanged.
    """
    t0 = time.perf_counter()
    image = np.asarray(image, dtype=np.float64)
    p = predict(model, image, **kw)
    if p.ma_hat is None:
        final = p.im_hat
    else:
        gate = binarize_mask(p.ma_hat) if hard else p.ma_hat
        final = compose_final(image, p.im_hat, gate)
    return RemovalResult(final, p.ma_hat, p.vm_hat, p.im_hat, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Evaluation


def score(
    im_final: np.ndarray,
    im: np.ndarray,
    cr: np.ndarray,
    ma: np.ndarray,
    ma_hat: np.ndarray | None = None,
) -> dict[str, float]:
    """Metrics of the reconstruction and of the corrupted input against ``im``."""
    row = {
        "psnr_cr": psnr(cr, im),
        "ssim_cr": ssim(cr, im),
        "psnr_final": psnr(im_final, im),
        "ssim_final": ssim(im_final, im),
        "mpsnr_cr": masked_psnr(cr, im, ma),
        "mssim_cr": masked_ssim(cr, im, ma),
        "mpsnr_final": masked_psnr(im_final, im, ma),
        "mssim_final": masked_ssim(im_final, im, ma),
    }
    if ma_hat is None:
        row["iou"] = row["missed"] = float("nan")
    else:
        row["iou"] = mask_iou(binarize_mask(ma_hat), ma)
        row["missed"] = float(row["iou"] < MISSED_IOU)
    return row


_WHOLE = ("psnr_cr", "ssim_cr", "psnr_final", "ssim_final")
_MASK = ("mpsnr_cr", "mssim_cr", "mpsnr_final", "mssim_final")
_DETECT = ("iou", "missed")


def _columns(protocol: str) -> tuple[str, ...]:
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    cols = {"whole": _WHOLE, "mask": _MASK, "both": _WHOLE + _MASK}[protocol]
    return cols + _DETECT


@dataclass
class EvalReport:
    """Per-image rows plus their NaN-skipping means."""

    rows: list[dict] = field(default_factory=list)
    protocol: str = "both"

    @property
    def columns(self) -> tuple[str, ...]:
        return _columns(self.protocol)

    @property
    def aggregate(self) -> dict[str, float]:
        out = {}
        for c in self.columns:
            vals = np.array([r[c] for r in self.rows], dtype=np.float64)
            out[c] = float(np.mean(vals[~np.isnan(vals)])) if np.any(~np.isnan(vals)) else float("nan")
        return out

    @property
    def missed_rate(self) -> float:
        return self.aggregate["missed"]

    def to_csv(self, path) -> None:
        cols = ("id",) + self.columns
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(cols)
            for r in self.rows:
                writer.writerow([r["id"]] + [_fmt(r[c]) for c in self.columns])
            agg = self.aggregate
            writer.writerow(["mean"] + [_fmt(agg[c]) for c in self.columns])

    def summary_rows(self) -> list[tuple]:
        """``(row name, psnr, ssim, masked psnr, masked ssim)`` for input and output."""
        agg = self.aggregate
        out = []
        for label, suffix in (("corrupted", "cr"), ("reconstructed", "final")):
            vals = [agg.get(f"{m}_{suffix}", float("nan")) for m in ("psnr", "ssim", "mpsnr", "mssim")]
            out.append((label, *vals))
        return out

    def to_text(self) -> str:
        header = ("", "PSNR", "SSIM", "mask PSNR", "mask SSIM")
        lines = [format_table(header, self.summary_rows())]
        agg = self.aggregate
        lines.append(f"images: {len(self.rows)}  mean IoU: {_fmt(agg['iou'])}  missed rate: {_fmt(agg['missed'])}")
        return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(x)
    return f"{x:.4f}"


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Right-aligned plain-text table; the first column is left-aligned."""
    cells = [list(header)] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def evaluate_set(
    model: MotifRemovalNet,
    samples: Sequence[CorruptedSample],
    protocol: str = "both",
    hard: bool = False,
    workers: int = 1,
    **kw,
) -> EvalReport:
    """Remove motifs from every sample and score against its ground truth."""
    _columns(protocol)

    def one(k_sample):
        k, s = k_sample
        if s.im is None or s.ma is None:
            raise ValueError(f"sample {k} has no ground truth")
        res = remove_motif(model, s.cr, hard=hard, **kw)
        row = {"id": s.provenance.get("id", f"{k:06d}")}
        row.update(score(res.im_final, s.im, s.cr, s.ma, res.ma_hat))
        return row

    items = list(enumerate(samples))
    # switch to eval mode once so worker threads never toggle it
    with inference_mode(model):
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                rows = list(ex.map(one, items))
        else:
            rows = [one(item) for item in items]
    return EvalReport(rows, protocol)
