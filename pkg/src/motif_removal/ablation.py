"""Train and score several network variants on identical data and seeds."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .losses import LossWeights
from .network import VARIANTS, ConfigError, ModelConfig, build_model, count_parameters
from .removal import evaluate_set, format_table
from .synth import CorruptedSample
from .training import TrainConfig, Trainer

log = logging.getLogger(__name__)

RES_BLOCKS = (1, 3, 5)
SHARED_DEPTHS = (1, 2, 3)
COLUMNS = (
    "variant",
    "res_blocks",
    "shared_levels",
    "params",
    "psnr",
    "ssim",
    "mask_psnr",
    "mask_ssim",
    "iou",
    "missed",
)


def ablation_grid(
    variants: Iterable[str] = VARIANTS,
    res_blocks: Iterable[int] = (3,),
    shared_depths: Iterable[int] = (2,),
    base: ModelConfig | None = None,
) -> list[ModelConfig]:
    """Cross product of the given settings.

    Shared depth only applies to ``baseline_shared_vm``; for other variants the
    duplicate entries collapse to one. Invalid combinations are skipped with a
    warning.
    """
    base = base or ModelConfig()
    out, seen = [], set()
    for v in variants:
        for r in res_blocks:
            for s in shared_depths:
                levels = s if v == "baseline_shared_vm" else 0
                if (v, r, levels) in seen:
                    continue
                seen.add((v, r, levels))
                try:
                    kw = {**base.to_dict(), "variant": v, "res_blocks_per_segment": r, "shared_decode_levels": levels}
                    out.append(ModelConfig(**kw))
                except ConfigError as e:
                    log.warning("skipping %s/res %s/shared %s: %s", v, r, s, e)
    return out


@dataclass
class AblationTable:
    rows: list[dict] = field(default_factory=list)

    def row(self, variant: str, **match) -> dict:
        for r in self.rows:
            if r["variant"] == variant and all(r[k] == v for k, v in match.items()):
                return r
        raise KeyError(variant)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)

    def to_text(self) -> str:
        return format_table(COLUMNS, [[r[c] for c in COLUMNS] for r in self.rows])


def run_ablation(
    grid: Sequence[ModelConfig | dict],
    train: Sequence[CorruptedSample],
    test: Sequence[CorruptedSample],
    train_config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    on_row: Callable[[dict], None] | None = None,
) -> AblationTable:
    """Train every configuration with the same data, seed and schedule, then score it."""
    table = AblationTable()
    for entry in grid:
        try:
            config = entry if isinstance(entry, ModelConfig) else ModelConfig(**entry)
        except (ConfigError, TypeError) as e:
            log.warning("skipping %s: %s", entry, e)
            continue
        model = build_model(config, seed)
        Trainer(model, train_config, weights).fit(train)
        agg = evaluate_set(model, test).aggregate
        row = {
            "variant": config.variant,
            "res_blocks": config.res_blocks_per_segment,
            "shared_levels": config.shared_decode_levels,
            "params": count_parameters(model),
            "psnr": agg["psnr_final"],
            "ssim": agg["ssim_final"],
            "mask_psnr": agg["mpsnr_final"],
            "mask_ssim": agg["mssim_final"],
            "iou": agg["iou"],
            "missed": agg["missed"],
        }
        log.info("%s", row)
        table.rows.append(row)
        if on_row is not None:
            on_row(row)
    return table
