"""Training losses. Tensors are NCHW; masks are ``N x 1 x H x W``.

The reconstruction terms are gated by the ground-truth mask rather than the
estimated one, so the mask decoder cannot shrink its estimate to dodge them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .network import ModelOutput

LOG_EPS = 1e-7


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    # weight of the reconstruction terms relative to the mask term
    recon_weight: float = 25.0

    def __post_init__(self):
        if not math.isfinite(self.recon_weight) or self.recon_weight < 0:
            raise LossError("recon_weight must be finite and non-negative")


@dataclass
class LossBreakdown:
    l_mask: torch.Tensor
    l_im: torch.Tensor
    l_vm: torch.Tensor
    l_total: torch.Tensor

    def to_dict(self) -> dict[str, float]:
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("l_mask", "l_im", "l_vm", "l_total")}


def combine(l_mask, l_im, l_vm, weights: LossWeights = LossWeights()):
    return l_mask + weights.recon_weight * (l_im + l_vm)


def loss_mask(ma_hat: torch.Tensor, ma: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy averaged over pixels and batch."""
    if ma_hat.shape != ma.shape:
        raise LossError(f"mask shapes differ: {tuple(ma_hat.shape)} vs {tuple(ma.shape)}")
    if not torch.all((ma == 0) | (ma == 1)):
        raise LossError("ground-truth mask must be binary")
    p = ma_hat.clamp(LOG_EPS, 1 - LOG_EPS)
    return -(ma * torch.log(p) + (1 - ma) * torch.log1p(-p)).mean()


def masked_l1(pred: torch.Tensor, target: torch.Tensor, ma: torch.Tensor) -> torch.Tensor:
    """Per-sample channel-summed absolute error over mask pixels, divided by the pixel count.

    A sample with an empty mask contributes 0. The result is the batch mean.
    """
    if pred.shape != target.shape or pred.shape[-2:] != ma.shape[-2:]:
        raise LossError(f"shapes differ: {tuple(pred.shape)}, {tuple(target.shape)}, {tuple(ma.shape)}")
    err = ((pred - target).abs() * ma).flatten(1).sum(1)
    count = ma.flatten(1).sum(1)
    per_sample = torch.where(count > 0, err / count.clamp_min(1), torch.zeros_like(err))
    return per_sample.mean()


def loss_image(im_hat, im, ma):
    return masked_l1(im_hat, im, ma)


def loss_motif(vm_hat, vm, ma):
    return masked_l1(vm_hat, vm, ma)


def total_loss(
    out: ModelOutput,
    im: torch.Tensor,
    vm: torch.Tensor,
    ma: torch.Tensor,
    weights: LossWeights = LossWeights(),
    variant: str = "baseline_shared_vm",
) -> LossBreakdown:
    """Loss for one batch under ``variant``.

    The autoencoder has no mask, so its image term covers the whole image.
    """
    needed = {"autoencoder": ("image",), "baseline": ("image", "mask")}.get(variant, ("image", "mask", "motif"))
    missing = [b for b in needed if getattr(out, b) is None]
    if missing:
        raise LossError(f"variant {variant} needs outputs {missing}")
    zero = out.image.new_zeros(())
    if variant == "autoencoder":
        l_mask, l_vm = zero, zero
        l_im = masked_l1(out.image, im, torch.ones_like(ma))
    else:
        l_mask = loss_mask(out.mask, ma)
        l_im = loss_image(out.image, im, ma)
        l_vm = loss_motif(out.motif, vm, ma) if "motif" in needed else zero
    return LossBreakdown(l_mask, l_im, l_vm, combine(l_mask, l_im, l_vm, weights))
