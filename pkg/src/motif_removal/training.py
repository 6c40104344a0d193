"""Optimization loop, checkpoints and loss history.

Training runs on random square patches cropped afresh from every sample each
epoch. The crop positions and batch order for epoch ``e`` come from a
generator seeded with ``(seed, e)``, so a run resumed from a checkpoint sees the
same data as an uninterrupted one. With one torch thread, training is
bit-reproducible.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
import torch

from .imaging import to_signed
from .losses import LossBreakdown, LossWeights, total_loss
from .network import MULTIPLE, ModelConfig, MotifRemovalNet, build_model
from .removal import evaluate_set
from .synth import CorruptedSample, sample_patch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "l_mask", "l_im", "l_vm", "l_total", "val_psnr", "val_ssim")


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    patch_size: int = 128
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patch_size < MULTIPLE or self.patch_size % MULTIPLE:
            raise ValueError(f"patch_size must be a positive multiple of {MULTIPLE}")
        if self.epochs < 0 or not (math.isfinite(self.lr) and self.lr >= 0):
            raise ValueError("epochs must be non-negative and lr finite and non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Batch(NamedTuple):
    """Network input and targets: images in the signed range, mask in {0, 1}."""

    cr: torch.Tensor
    im: torch.Tensor
    vm: torch.Tensor
    ma: torch.Tensor


def to_batch(samples: Sequence[CorruptedSample], dtype=torch.float32) -> Batch:
    def images(name):
        a = np.stack([to_signed(getattr(s, name)) for s in samples]).transpose(0, 3, 1, 2)
        return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)

    ma = np.stack([(s.ma > 0) for s in samples])[:, None]
    return Batch(images("cr"), images("im"), images("vm"), torch.from_numpy(ma).to(dtype))


def epoch_batches(samples: Sequence[CorruptedSample], config: TrainConfig, epoch: int, dtype=torch.float32) -> Iterator[Batch]:
    """Shuffled batches of fresh random patches for one epoch."""
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(samples))
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        yield to_batch([sample_patch(samples[i], config.patch_size, rng) for i in idx], dtype)


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))


def train_step(
    model: MotifRemovalNet,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """One optimizer update on ``batch``; returns the pre-update losses, detached."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    out = model(batch.cr)
    losses = total_loss(out, batch.im, batch.vm, batch.ma, weights, model.config.variant)
    if not torch.isfinite(losses.l_total):
        raise NonFiniteLossError(f"non-finite loss: {losses.to_dict()}")
    losses.l_total.backward()
    optimizer.step()
    return LossBreakdown(*(t.detach() for t in (losses.l_mask, losses.l_im, losses.l_vm, losses.l_total)))


def validate(model: MotifRemovalNet, samples: Sequence[CorruptedSample]) -> tuple[float, float]:
    """Mean PSNR and SSIM of the removal output against ground truth."""
    agg = evaluate_set(model, samples, protocol="whole").aggregate
    return agg["psnr_final"], agg["ssim_final"]


class Trainer:
    """Holds the model, optimizer and progress counters of one training run."""

    def __init__(
        self,
        model: MotifRemovalNet,
        config: TrainConfig = TrainConfig(),
        weights: LossWeights = LossWeights(),
        optimizer: torch.optim.Optimizer | None = None,
    ):
        self.model = model
        self.config = config
        self.weights = weights
        self.optimizer = optimizer or make_optimizer(model, config)
        self.epoch = 0
        self.step = 0
        self.history: list[dict] = []

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    def run_epoch(self, train: Sequence[CorruptedSample], val: Sequence[CorruptedSample] | None = None) -> dict:
        sums = dict.fromkeys(("l_mask", "l_im", "l_vm", "l_total"), 0.0)
        n = 0
        for batch in epoch_batches(train, self.config, self.epoch, self.dtype):
            try:
                losses = train_step(self.model, self.optimizer, batch, self.weights)
            except NonFiniteLossError as e:
                raise NonFiniteLossError(f"epoch {self.epoch + 1}, step {self.step + 1}: {e}") from None
            self.step += 1
            for k, v in losses.to_dict().items():
                sums[k] += v * len(batch.cr)
            n += len(batch.cr)
        self.epoch += 1
        record = {"epoch": self.epoch, **{k: v / max(n, 1) for k, v in sums.items()}}
        record["val_psnr"], record["val_ssim"] = validate(self.model, val) if val else (math.nan, math.nan)
        self.history.append(record)
        log.info(
            "epoch %d  mask %.4f  image %.4f  motif %.4f  total %.4f  val PSNR %.2f SSIM %.4f",
            *(record[c] for c in HISTORY_COLUMNS),
        )
        return record

    def fit(
        self,
        train: Sequence[CorruptedSample],
        val: Sequence[CorruptedSample] | None = None,
        checkpoint_path=None,
        history_path=None,
        on_epoch: Callable[[Trainer, dict], None] | None = None,
    ) -> list[dict]:
        """Train until ``config.epochs`` epochs are done, continuing from ``self.epoch``."""
        if not train:
            raise ValueError("no training samples")
        while self.epoch < self.config.epochs:
            record = self.run_epoch(train, val)
            if checkpoint_path is not None:
                self.save(checkpoint_path)
            if history_path is not None:
                write_history(history_path, self.history)
            if on_epoch is not None:
                on_epoch(self, record)
        return self.history

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.optimizer, self)

    @classmethod
    def resume(cls, path, config: TrainConfig | None = None) -> Trainer:
        """Rebuild a trainer from a checkpoint; ``config`` may extend the epoch count."""
        ckpt = read_checkpoint(path)
        model = model_from_checkpoint(ckpt)
        trainer = cls(
            model,
            config or TrainConfig(**ckpt["train_config"]),
            LossWeights(**ckpt["loss_weights"]),
        )
        if ckpt.get("optimizer") is not None:
            trainer.optimizer.load_state_dict(ckpt["optimizer"])
        trainer.epoch, trainer.step = ckpt["epoch"], ckpt["step"]
        trainer.history = [dict(r) for r in ckpt["history"]]
        return trainer


def fit(
    model: MotifRemovalNet,
    train: Sequence[CorruptedSample],
    config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    val: Sequence[CorruptedSample] | None = None,
    **kw,
) -> tuple[MotifRemovalNet, list[dict]]:
    trainer = Trainer(model, config, weights)
    history = trainer.fit(train, val, **kw)
    return model, history


# ---------------------------------------------------------------------------
# Persistence


def save_checkpoint(path, model: MotifRemovalNet, optimizer=None, trainer: Trainer | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": trainer.epoch if trainer else 0,
        "step": trainer.step if trainer else 0,
        "history": trainer.history if trainer else [],
        "train_config": trainer.config.to_dict() if trainer else TrainConfig().to_dict(),
        "loss_weights": asdict(trainer.weights) if trainer else asdict(LossWeights()),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(ckpt, tmp)
    tmp.replace(path)


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{path} is not a readable checkpoint: {e}") from e
    version = ckpt.get("format_version") if isinstance(ckpt, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> MotifRemovalNet:
    model = build_model(ModelConfig(**ckpt["model_config"]))
    model.load_state_dict(ckpt["state_dict"])
    return model


def load_model(path) -> MotifRemovalNet:
    """A checkpointed model, ready for inference (eval mode)."""
    return model_from_checkpoint(read_checkpoint(path)).eval()


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, HISTORY_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for r in history:
            writer.writerow({k: (r[k] if k == "epoch" else repr(float(r[k]))) for k in HISTORY_COLUMNS})


def read_history(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]
