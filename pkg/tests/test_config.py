import pytest

from motif_removal.config import (
    SCHEMA,
    ConfigError,
    defaults,
    load_config,
    model_config,
    motif_specs,
    parse_override,
    placement_params,
    resolve_path,
    train_config,
    write_config,
)
from motif_removal.motifs import PRESETS

CLASSES = ("text_color", "text_gray", "emoji", "shapes", "inpainting")
SHIPPED = (*CLASSES, "watermark", "mixed")


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_presets_load(name):
    cfg = load_config(name)
    assert motif_specs(cfg)
    model_config(cfg)
    placement_params(cfg)
    train_config(cfg)


@pytest.mark.parametrize("name", [*CLASSES, "watermark"])
def test_each_motif_class_has_its_preset(name):
    assert PRESETS[name] in motif_specs(load_config(name))


def test_roundtrip_through_file(tmp_path):
    cfg = load_config("watermark", ["train.lr=0.0005", "placement.scale_range=8, 20", "remove.hard_mask=yes"])
    write_config(cfg, tmp_path / "c.ini")
    again = load_config(tmp_path / "c.ini")
    assert again == cfg
    assert again["train"]["lr"] == 0.0005
    assert again["placement"]["scale_range"] == (8, 20)
    assert again["remove"]["hard_mask"] is True


def test_overrides_win_over_file(tmp_path):
    (tmp_path / "c.cfg").write_text("[train]\nepochs = 5\nlr = 0.01\n")
    cfg = load_config(tmp_path / "c.cfg", ["train.epochs=7"])
    assert cfg["train"]["epochs"] == 7 and cfg["train"]["lr"] == 0.01
    assert train_config(cfg).epochs == 7


def test_defaults_are_independent_copies():
    a = defaults()
    a["train"]["lr"] = 5.0
    assert defaults()["train"]["lr"] == SCHEMA["train"]["lr"]


@pytest.mark.parametrize(
    "text",
    ["[nope]\nx = 1\n", "[train]\nnope = 1\n", "[train]\nepochs = lots\n", "[remove]\nhard_mask = maybe\n", "not ini"],
)
def test_invalid_files_rejected(tmp_path, text):
    (tmp_path / "c.cfg").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.cfg")


@pytest.mark.parametrize("text", ["train.lr", "lr=1", "train.=1"])
def test_malformed_override(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_typed_views_wrap_errors():
    with pytest.raises(ConfigError):
        model_config(load_config(overrides=["model.variant=unet"]))
    with pytest.raises(ConfigError):
        train_config(load_config(overrides=["train.patch_size=100"]))
    with pytest.raises(ConfigError):
        motif_specs(load_config(overrides=["motifs.presets=clouds"]))
    with pytest.raises(ConfigError):
        placement_params(load_config(overrides=["placement.max_motifs_per_image=0"]))


def test_default_presets_exist():
    assert set(SCHEMA["motifs"]["presets"]) <= set(PRESETS)


def test_missing_config_file():
    with pytest.raises(FileNotFoundError):
        resolve_path("/nonexistent/none.cfg")
