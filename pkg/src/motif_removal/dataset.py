"""On-disk dataset layout.

::

    root/
      manifest.json          # format version, seed, specs, placement, samples
      000000/cr.png im.png vm.png ma.png alpha.png
      000001/...

Sample directories are written by index as they are produced; the manifest is
written once at the end and is what makes the directory a dataset.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .imaging import load_image, load_plane, save_image, save_plane
from .synth import CorruptedSample

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
IMAGE_PLANES = ("cr", "im", "vm")
MASK_PLANES = ("ma", "alpha")


class DatasetError(Exception):
    pass


class MissingManifestError(DatasetError, FileNotFoundError):
    pass


class ChecksumMismatchError(DatasetError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def sample_dirname(index: int) -> str:
    return f"{index:06d}"


def write_sample(root, index: int, sample: CorruptedSample) -> dict:
    """Write one sample directory and return its manifest entry."""
    d = Path(root) / sample_dirname(index)
    d.mkdir(parents=True, exist_ok=True)
    for name in IMAGE_PLANES:
        save_image(d / f"{name}.png", getattr(sample, name))
    for name in MASK_PLANES:
        save_plane(d / f"{name}.png", getattr(sample, name))
    files = [f"{n}.png" for n in IMAGE_PLANES + MASK_PLANES]
    return {
        "id": sample_dirname(index),
        "provenance": _jsonable(sample.provenance),
        "sha256": {f: _sha256(d / f) for f in files},
    }


def commit_manifest(root, entries: list[dict], meta: dict | None = None) -> Path:
    manifest = {
        "format_version": FORMAT_VERSION,
        **(meta or {}),
        "count": len(entries),
        "samples": sorted(entries, key=lambda e: e["id"]),
    }
    path = Path(root) / MANIFEST
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def write_dataset(samples: Iterable[CorruptedSample], root, meta: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = [write_sample(root, i, s) for i, s in enumerate(samples)]
    return commit_manifest(root, entries, meta)


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise MissingManifestError(f"no {MANIFEST} in {root}")
    manifest = json.loads(path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    return manifest


def read_dataset(root, verify: bool = True) -> Iterator[CorruptedSample]:
    """Yield samples in manifest order, as float32 unit-range arrays."""
    root = Path(root)
    manifest = read_manifest(root)
    for entry in manifest["samples"]:
        d = root / entry["id"]
        if verify:
            for fname, digest in entry["sha256"].items():
                if not (d / fname).is_file() or _sha256(d / fname) != digest:
                    raise ChecksumMismatchError(f"{d / fname} does not match the manifest")
        planes = {n: load_image(d / f"{n}.png") for n in IMAGE_PLANES}
        planes.update({n: load_plane(d / f"{n}.png") for n in MASK_PLANES})
        yield CorruptedSample(**planes, provenance={**entry.get("provenance", {}), "id": entry["id"]})


def load_dataset(root, verify: bool = True) -> list[CorruptedSample]:
    return list(read_dataset(root, verify))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
