"""INI-style run configuration with a fixed schema.

Every section and key has a default. A config file may set any subset; an
unknown section or key is an error. ``section.key=value`` overrides apply on
top of the file, and the fully resolved config is what gets written beside a
run's outputs.
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .losses import LossWeights
from .motifs import PRESETS, MotifSpec
from .network import VARIANTS, ModelConfig
from .removal import OVERLAP, PIXEL_BUDGET, TILE
from .synth import PlacementParams
from .training import TrainConfig

Config = dict[str, dict[str, object]]


class ConfigError(ValueError):
    pass


def _dataclass_defaults(cls, skip=()) -> dict:
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


SCHEMA: Config = {
    "synth": {
        "image_size": 512,
        "count": 100,
        # a directory of photos, or "builtin:train" / "builtin:test" / "builtin:all"
        "backgrounds": "builtin:train",
        # a directory of emblem images; empty means procedurally drawn emblems
        "rasters": "",
        "seed": 0,
        "workers": 1,
    },
    "motifs": {"presets": ("text_color",)},
    "placement": _dataclass_defaults(PlacementParams, skip=("rng_seed",)),
    "model": _dataclass_defaults(ModelConfig, skip=("num_segments", "in_channels")),
    "train": {**_dataclass_defaults(TrainConfig), **_dataclass_defaults(LossWeights)},
    "remove": {"hard_mask": False, "pixel_budget": PIXEL_BUDGET, "tile": TILE, "overlap": OVERLAP},
    "eval": {"protocol": "both", "workers": 1},
    "ablate": {"variants": VARIANTS, "res_blocks": (3,), "shared_depths": (2,)},
    # inputs of the run, recorded so a snapshot names everything it was made from
    "run": {"dataset": "", "val_dataset": "", "test_dataset": "", "model": "", "resume": ""},
}


def defaults() -> Config:
    return {s: dict(keys) for s, keys in SCHEMA.items()}


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def set_value(cfg: Config, section: str, key: str, raw) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    default = SCHEMA[section][key]
    cfg[section][key] = _parse(raw, default, f"{section}.{key}") if isinstance(raw, str) else raw


def parse_override(text: str) -> tuple[str, str, str]:
    """Split ``section.key=value``."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    return section, key, value


def resolve_path(path) -> Path:
    """A config path as given, or else the shipped preset of that name."""
    p = Path(path)
    if p.is_file():
        return p
    shipped = resources.files("motif_removal") / "presets" / p.with_suffix(".cfg").name
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"config file {path} not found")


def load_config(path=None, overrides=()) -> Config:
    cfg = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(resolve_path(path).read_text(), source=str(path))
        except configparser.Error as e:
            raise ConfigError(str(e).splitlines()[0]) from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                set_value(cfg, section, key, raw)
    for text in overrides:
        set_value(cfg, *parse_override(text))
    return cfg


def write_config(cfg: Config, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in cfg.items():
        parser[section] = {k: _format(v) for k, v in keys.items()}
    with open(path, "w") as f:
        parser.write(f)


# ---------------------------------------------------------------------------
# Typed views


def placement_params(cfg: Config) -> PlacementParams:
    try:
        return PlacementParams(**cfg["placement"], rng_seed=cfg["synth"]["seed"])
    except ValueError as e:
        raise ConfigError(f"[placement]: {e}") from None


def motif_specs(cfg: Config) -> list[MotifSpec]:
    names = cfg["motifs"]["presets"]
    unknown = [n for n in names if n not in PRESETS]
    if unknown or not names:
        raise ConfigError(f"unknown motif presets {unknown}; available: {sorted(PRESETS)}")
    return [PRESETS[n] for n in names]


def model_config(cfg: Config) -> ModelConfig:
    try:
        return ModelConfig(**cfg["model"])
    except ValueError as e:
        raise ConfigError(f"[model]: {e}") from None


def train_config(cfg: Config) -> TrainConfig:
    keys = {f.name for f in fields(TrainConfig)}
    try:
        return TrainConfig(**{k: v for k, v in cfg["train"].items() if k in keys})
    except ValueError as e:
        raise ConfigError(f"[train]: {e}") from None


def loss_weights(cfg: Config) -> LossWeights:
    try:
        return LossWeights(cfg["train"]["recon_weight"])
    except ValueError as e:
        raise ConfigError(f"[train]: {e}") from None
