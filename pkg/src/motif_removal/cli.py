"""Command-line entry point: ``motif-removal {synth,train,remove,eval,ablate}``.

Exit codes: 0 success, 1 missing or unreadable input files, 2 bad flags or
config, 3 training aborted on a non-finite loss. Errors are reported as one
``motif-removal: error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .ablation import ablation_grid, run_ablation
from .backgrounds import TEST_PHOTOS, TRAIN_PHOTOS, builtin_photos, load_backgrounds
from .config import (
    ConfigError,
    Config,
    load_config,
    loss_weights,
    model_config,
    motif_specs,
    placement_params,
    set_value,
    train_config,
    write_config,
)
from .dataset import DatasetError, load_dataset, write_dataset
from .imaging import load_image
from .motifs import RasterBank, procedural_emblems
from .network import build_model
from .removal import PROTOCOLS, check_tiling, evaluate_set, remove_motif
from .synth import SynthesisJob, synthesize_dataset
from .training import CheckpointError, NonFiniteLossError, Trainer, load_model, write_history

log = logging.getLogger("motif_removal")

CONFIG_NAME = "config.ini"
EMBLEM_COUNT = 64


class UsageError(Exception):
    pass


def _apply(cfg: Config, section: str, key: str, value) -> None:
    if value is not None:
        set_value(cfg, section, key, value if not isinstance(value, list) else tuple(value))


def _need(cfg: Config, key: str) -> str:
    """A required input path, given by flag or by ``[run]`` in the config."""
    if not cfg["run"][key]:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg["run"][key]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _backgrounds(spec: str):
    if spec.startswith("builtin:"):
        names = {"train": TRAIN_PHOTOS, "test": TEST_PHOTOS, "all": TRAIN_PHOTOS + TEST_PHOTOS}.get(spec[8:])
        if names is None:
            raise ConfigError(f"unknown builtin photo set {spec!r}")
        return builtin_photos(names)
    return load_backgrounds(spec)


def _rasters(directory: str) -> RasterBank:
    if not directory:
        return procedural_emblems(EMBLEM_COUNT, seed=0)
    path = Path(directory)
    if not path.is_dir():
        raise FileNotFoundError(f"raster directory {directory} does not exist")
    bank = RasterBank()
    bank.register_directory(path)
    return bank


def _train_seed_threads(cfg: Config, args) -> None:
    _apply(cfg, "train", "seed", args.seed)
    # a single intra-op thread keeps float reductions in a fixed order
    torch.set_num_threads(max(1, args.workers or 1))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(cfg: Config, args) -> int:
    _apply(cfg, "synth", "seed", args.seed)
    _apply(cfg, "synth", "count", args.count)
    _apply(cfg, "synth", "workers", args.workers)
    _apply(cfg, "synth", "image_size", args.image_size)
    _apply(cfg, "synth", "backgrounds", args.backgrounds)
    s = cfg["synth"]
    specs = motif_specs(cfg)
    backgrounds = _backgrounds(s["backgrounds"])
    rasters = _rasters(s["rasters"]) if any(sp.kind == "raster" for sp in specs) else None
    try:
        job = SynthesisJob(backgrounds, specs, placement_params(cfg), s["image_size"], rasters=rasters)
    except ValueError as e:
        raise ConfigError(f"[synth]: {e}") from None
    out = _out_dir(args)
    write_dataset(synthesize_dataset(job, s["count"], workers=s["workers"]), out, job.manifest())
    write_config(cfg, out / CONFIG_NAME)
    print(f"wrote {s['count']} samples to {out}")
    return 0


def cmd_train(cfg: Config, args) -> int:
    _train_seed_threads(cfg, args)
    _apply(cfg, "train", "epochs", args.epochs)
    _apply(cfg, "run", "dataset", args.dataset)
    _apply(cfg, "run", "val_dataset", args.val_dataset)
    _apply(cfg, "run", "resume", args.resume)
    run = cfg["run"]
    train = load_dataset(_need(cfg, "dataset"))
    val = load_dataset(run["val_dataset"]) if run["val_dataset"] else None
    tcfg = train_config(cfg)
    if run["resume"]:
        trainer = Trainer.resume(run["resume"], tcfg)
        cfg["model"].update({k: v for k, v in trainer.model.config.to_dict().items() if k in cfg["model"]})
    else:
        model = build_model(model_config(cfg), seed=tcfg.seed)
        trainer = Trainer(model, tcfg, loss_weights(cfg))
    out = _out_dir(args)
    write_config(cfg, out / CONFIG_NAME)
    history = trainer.fit(train, val, checkpoint_path=out / "model.ckpt", history_path=out / "history.csv")
    if not history:
        trainer.save(out / "model.ckpt")
        write_history(out / "history.csv", history)
    print(f"trained {trainer.epoch} epochs; checkpoint {out / 'model.ckpt'}")
    return 0


def _removal_kw(cfg: Config) -> dict:
    r = cfg["remove"]
    try:
        check_tiling(r["tile"], r["overlap"])
    except ValueError as e:
        raise ConfigError(f"[remove]: {e}") from None
    return {"hard": r["hard_mask"], "pixel_budget": r["pixel_budget"], "tile": r["tile"], "overlap": r["overlap"]}


def cmd_remove(cfg: Config, args) -> int:
    _apply(cfg, "run", "model", args.model)
    _apply(cfg, "remove", "hard_mask", True if args.hard_mask else None)
    model = load_model(_need(cfg, "model"))
    out = _out_dir(args)
    images = [(Path(p), load_image(p)) for p in args.input]
    used: set[str] = set()
    for path, image in images:
        name, k = path.stem, 1
        while name in used:
            k += 1
            name = f"{path.stem}_{k}"
        used.add(name)
        target = out if len(images) == 1 else out / name
        res = remove_motif(model, image, **_removal_kw(cfg))
        res.save(target)
        log.info("%s -> %s (%.2f s)", path, target, res.seconds)
    write_config(cfg, out / CONFIG_NAME)
    return 0


def cmd_eval(cfg: Config, args) -> int:
    _apply(cfg, "run", "model", args.model)
    _apply(cfg, "run", "dataset", args.dataset)
    _apply(cfg, "eval", "protocol", args.protocol)
    _apply(cfg, "eval", "workers", args.workers)
    _apply(cfg, "remove", "hard_mask", True if args.hard_mask else None)
    if cfg["eval"]["protocol"] not in PROTOCOLS:
        raise ConfigError(f"eval.protocol must be one of {PROTOCOLS}")
    model = load_model(_need(cfg, "model"))
    samples = load_dataset(_need(cfg, "dataset"))
    report = evaluate_set(model, samples, cfg["eval"]["protocol"], workers=cfg["eval"]["workers"], **_removal_kw(cfg))
    out = _out_dir(args)
    report.to_csv(out / "eval.csv")
    text = report.to_text()
    (out / "eval.txt").write_text(text + "\n")
    write_config(cfg, out / CONFIG_NAME)
    print(text)
    return 0


def cmd_ablate(cfg: Config, args) -> int:
    _train_seed_threads(cfg, args)
    _apply(cfg, "train", "epochs", args.epochs)
    _apply(cfg, "run", "dataset", args.dataset)
    _apply(cfg, "run", "test_dataset", args.test_dataset)
    _apply(cfg, "ablate", "variants", args.variants)
    _apply(cfg, "ablate", "res_blocks", args.res_blocks)
    _apply(cfg, "ablate", "shared_depths", args.shared_depths)
    a = cfg["ablate"]
    grid = ablation_grid(a["variants"], a["res_blocks"], a["shared_depths"], model_config(cfg))
    train = load_dataset(_need(cfg, "dataset"))
    test = load_dataset(_need(cfg, "test_dataset"))
    out = _out_dir(args)
    write_config(cfg, out / CONFIG_NAME)
    tcfg = train_config(cfg)
    table = run_ablation(grid, train, test, tcfg, loss_weights(cfg), seed=tcfg.seed)
    table.to_csv(out / "ablation.csv")
    (out / "ablation.txt").write_text(table.to_text() + "\n")
    print(table.to_text())
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file, or the name of a shipped preset (e.g. emoji)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value; repeatable; flags below win over both",
    )
    common.add_argument("--seed", type=int, help="random seed (synth.seed or train.seed)")
    common.add_argument("--workers", type=int, help="parallel workers; 1 is bit-reproducible")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="motif-removal",
        description="Synthesize motif-corrupted images, train a removal network, remove and evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="synthesize a dataset")
    p.add_argument("--count", type=int, help="number of images")
    p.add_argument("--image-size", type=int, help="side length of the square images")
    p.add_argument("--backgrounds", help="photo directory, or builtin:train|builtin:test|builtin:all")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model on a synthesized dataset")
    p.add_argument("--dataset", help="training dataset directory")
    p.add_argument("--val-dataset", help="validation dataset directory")
    p.add_argument("--epochs", type=int, help="total number of epochs")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("remove", parents=[common], help="remove motifs from images")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--input", nargs="+", required=True, help="input image(s)")
    p.add_argument("--hard-mask", action="store_true", help="threshold the mask at 0.5 before blending")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("eval", parents=[common], help="score a model on a dataset with ground truth")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--protocol", choices=("whole", "mask", "both"), help="metrics over the whole image, the mask, or both")
    p.add_argument("--hard-mask", action="store_true", help="threshold the mask at 0.5 before blending")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare network variants")
    p.add_argument("--dataset", help="training dataset directory")
    p.add_argument("--test-dataset", help="test dataset directory")
    p.add_argument("--variants", nargs="+", help="variants to compare")
    p.add_argument("--res-blocks", nargs="+", type=int, help="residual blocks per segment")
    p.add_argument("--shared-depths", nargs="+", type=int, help="shared decode levels")
    p.add_argument("--epochs", type=int, help="epochs per variant")
    p.set_defaults(func=cmd_ablate)
    return parser


def _fail(kind: str, err, code: int) -> int:
    msg = " ".join(str(err).split())
    print(f"motif-removal: error: {kind}: {msg}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, args.overrides)
        code = args.func(cfg, args)
    except (ConfigError, UsageError) as e:
        parser.print_usage(sys.stderr)
        return _fail("config", e, 2)
    except (FileNotFoundError, DatasetError, CheckpointError) as e:
        return _fail("input", e, 1)
    except NonFiniteLossError as e:
        return _fail("non-finite-loss", e, 3)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
