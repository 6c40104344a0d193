"""Shared-encoder U-Net with mask, image and motif decoder branches.

Tensors are NCHW. Images enter and leave in the signed range [-1, 1]; the mask
branch emits probabilities in (0, 1).

The image and motif decoders share their first ``shared_decode_levels`` decode
segments. Shared segments are single module instances stored once under
``shared.*``; they see the same input for both branches, so they are also
evaluated once per forward pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANTS = ("autoencoder", "baseline", "baseline_vm", "baseline_shared_vm")
NUM_SEGMENTS = 5
MULTIPLE = 2**NUM_SEGMENTS

_BRANCHES = {
    "autoencoder": ("image",),
    "baseline": ("image", "mask"),
    "baseline_vm": ("image", "mask", "motif"),
    "baseline_shared_vm": ("image", "mask", "motif"),
}
_OUT_CHANNELS = {"image": 3, "mask": 1, "motif": 3}


class ConfigError(ValueError):
    pass


class InputShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    num_segments: int = NUM_SEGMENTS
    res_blocks_per_segment: int = 3
    shared_decode_levels: int = 2
    variant: str = "baseline_shared_vm"
    in_channels: int = 3
    padding_mode: str = "zeros"
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_segments != NUM_SEGMENTS:
            raise ConfigError(f"the network has exactly {NUM_SEGMENTS} segments")
        if self.res_blocks_per_segment < 1:
            raise ConfigError("res_blocks_per_segment must be >= 1")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError("base_channels must be an even integer >= 2")
        if not 0 <= self.shared_decode_levels <= self.num_segments:
            raise ConfigError(f"shared_decode_levels must be in [0, {self.num_segments}]")
        if self.variant == "baseline_shared_vm" and self.shared_decode_levels == 0:
            raise ConfigError("baseline_shared_vm needs shared_decode_levels >= 1")
        if self.variant != "baseline_shared_vm" and self.shared_decode_levels > 0:
            raise ConfigError(f"variant {self.variant} has no shared decode levels")
        if self.padding_mode not in ("zeros", "circular"):
            raise ConfigError("padding_mode must be 'zeros' or 'circular'")

    @property
    def branches(self) -> tuple[str, ...]:
        return _BRANCHES[self.variant]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_variant(cls, variant: str, shared_decode_levels: int = 2, **kw) -> ModelConfig:
        """Config for ``variant`` with sharing switched off where it does not apply."""
        levels = shared_decode_levels if variant == "baseline_shared_vm" else 0
        return cls(variant=variant, shared_decode_levels=levels, **kw)


class ModelOutput(NamedTuple):
    image: torch.Tensor | None = None
    mask: torch.Tensor | None = None
    motif: torch.Tensor | None = None


def conv3x3(cin, cout, padding_mode="zeros"):
    return nn.Conv2d(cin, cout, 3, padding=1, bias=False, padding_mode=padding_mode)


class ResidualBlock(nn.Module):
    def __init__(self, channels, padding_mode="zeros", momentum=0.1):
        super().__init__()
        self.conv1 = conv3x3(channels, channels, padding_mode)
        self.bn1 = nn.BatchNorm2d(channels, momentum=momentum)
        self.conv2 = conv3x3(channels, channels, padding_mode)
        self.bn2 = nn.BatchNorm2d(channels, momentum=momentum)

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        return F.relu(x + self.bn2(self.conv2(y)))


class EncodeSegment(nn.Module):
    """3x3 conv + BN + ReLU, then residual blocks. Pooling happens outside."""

    def __init__(self, cin, cout, blocks, padding_mode="zeros", momentum=0.1):
        super().__init__()
        self.conv = conv3x3(cin, cout, padding_mode)
        self.bn = nn.BatchNorm2d(cout, momentum=momentum)
        self.blocks = nn.Sequential(
            *[ResidualBlock(cout, padding_mode, momentum) for _ in range(blocks)]
        )

    def forward(self, x):
        return self.blocks(F.relu(self.bn(self.conv(x))))


class DecodeSegment(nn.Module):
    """Stride-2 3x3 transposed conv, then a 3x3 conv over ``[upsampled, skip]``."""

    def __init__(self, cin, cskip, cout, blocks, padding_mode="zeros", momentum=0.1):
        super().__init__()
        self.padding_mode = padding_mode
        self.up = nn.ConvTranspose2d(cin, cout, 3, stride=2)
        self.fuse = conv3x3(cout + cskip, cout, padding_mode)
        self.bn = nn.BatchNorm2d(cout, momentum=momentum)
        self.blocks = nn.Sequential(
            *[ResidualBlock(cout, padding_mode, momentum) for _ in range(blocks)]
        )

    def upsample(self, x):
        # Same result as ConvTranspose2d(padding=1, output_padding=1), but the
        # one-pixel border it reads past can wrap around for circular padding.
        n_h, n_w = x.shape[-2:]
        mode = "circular" if self.padding_mode == "circular" else "constant"
        y = self.up(F.pad(x, (0, 1, 0, 1), mode=mode))
        return y[..., 1 : 2 * n_h + 1, 1 : 2 * n_w + 1]

    def forward(self, x, skip):
        y = torch.cat([self.upsample(x), skip], dim=1)
        return self.blocks(F.relu(self.bn(self.fuse(y))))


class MotifRemovalNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        widths = [c.base_channels * 2**k for k in range(c.num_segments)]
        kw = dict(padding_mode=c.padding_mode, momentum=c.bn_momentum)

        self.encoder = nn.ModuleList(
            EncodeSegment(c.in_channels if k == 0 else widths[k - 1], widths[k], c.res_blocks_per_segment, **kw)
            for k in range(c.num_segments)
        )

        def decode(level):
            w = widths[c.num_segments - 1 - level]
            return DecodeSegment(w, w, w // 2, c.res_blocks_per_segment, **kw)

        self.shared = nn.ModuleDict({f"level{j}": decode(j) for j in range(c.shared_decode_levels)})
        self.decoders = nn.ModuleDict(
            {
                b: nn.ModuleDict(
                    {f"level{j}": decode(j) for j in range(self._first_private(b), c.num_segments)}
                )
                for b in c.branches
            }
        )
        self.heads = nn.ModuleDict({b: nn.Conv2d(widths[0] // 2, _OUT_CHANNELS[b], 1) for b in c.branches})

    def _first_private(self, branch: str) -> int:
        return self.config.shared_decode_levels if branch in ("image", "motif") else 0

    def decode_segments(self, branch: str) -> list[DecodeSegment]:
        """All decode segments a branch runs through, shared ones included."""
        start = self._first_private(branch)
        return [self.shared[f"level{j}"] for j in range(start)] + [
            self.decoders[branch][f"level{j}"] for j in range(start, self.config.num_segments)
        ]

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise InputShapeError(
                f"expected an N x {self.config.in_channels} x H x W batch, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % MULTIPLE or w % MULTIPLE:
            raise InputShapeError(f"spatial dims {h}x{w} must be divisible by {MULTIPLE}")

    def forward(self, x: torch.Tensor, record: list | None = None) -> ModelOutput:
        self.check_input(x)
        n = self.config.num_segments
        skips = []
        for k, seg in enumerate(self.encoder):
            f = seg(x)
            skips.append(f)
            x = F.max_pool2d(f, 2)
            if record is not None:
                record.append((f"encoder.{k}", tuple(x.shape[1:])))

        shared = x
        for j in range(self.config.shared_decode_levels):
            shared = self.shared[f"level{j}"](shared, skips[n - 1 - j])
            if record is not None:
                record.append((f"shared.level{j}", tuple(shared.shape[1:])))

        outputs = {}
        for branch in self.config.branches:
            start = self._first_private(branch)
            h = shared if start else x
            for j in range(start, n):
                h = self.decoders[branch][f"level{j}"](h, skips[n - 1 - j])
                if record is not None:
                    record.append((f"decoders.{branch}.level{j}", tuple(h.shape[1:])))
            y = self.heads[branch](h)
            outputs[branch] = torch.sigmoid(y) if branch == "mask" else torch.tanh(y)
        return ModelOutput(**outputs)


def build_model(config: ModelConfig | None = None, seed: int = 0) -> MotifRemovalNet:
    """Build a model with parameters initialised deterministically from ``seed``."""
    config = config or ModelConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return MotifRemovalNet(config)


def count_parameters(model: nn.Module) -> int:
    # parameters() yields each shared tensor once
    return sum(p.numel() for p in model.parameters())


@torch.no_grad()
def segment_shapes(model: MotifRemovalNet, input_hw: tuple[int, int]) -> list[tuple[str, tuple]]:
    """``(segment name, (C, H, W))`` for every encode and decode segment."""
    was_training = model.training
    model.eval()
    try:
        p = next(model.parameters())
        record: list = []
        model(torch.zeros(1, model.config.in_channels, *input_hw, dtype=p.dtype), record=record)
        return record
    finally:
        model.train(was_training)
