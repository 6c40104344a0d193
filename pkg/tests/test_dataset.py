import json

import numpy as np
import pytest

from motif_removal.dataset import (
    ChecksumMismatchError,
    DatasetError,
    MissingManifestError,
    load_dataset,
    read_manifest,
    write_dataset,
)
from motif_removal.imaging import embed_motif
from motif_removal.motifs import PRESETS
from motif_removal.synth import PlacementParams, SynthesisJob, synthesize_dataset


@pytest.fixture(scope="module")
def job(backgrounds):
    return SynthesisJob(backgrounds, [PRESETS["text_color"], PRESETS["shapes"]], PlacementParams(rng_seed=7), 128)


@pytest.fixture(scope="module")
def samples(job):
    return list(synthesize_dataset(job, 10))


def test_write_then_read(tmp_path, job, samples):
    write_dataset(samples, tmp_path, job.manifest())
    back = load_dataset(tmp_path)
    assert len(back) == 10
    assert [s.provenance["index"] for s in back] == list(range(10))
    for orig, loaded in zip(samples, back):
        assert np.max(np.abs(loaded.cr - orig.cr)) <= 1 / 255
        for name, plane in orig.planes().items():
            assert np.max(np.abs(loaded.planes()[name] - plane)) <= 0.5 / 255 + 1e-6
        np.testing.assert_array_equal(loaded.ma > 0, loaded.alpha > 0)
        # matting relation survives 8-bit quantization of every plane
        assert np.max(np.abs(embed_motif(loaded.im, loaded.vm, loaded.alpha) - loaded.cr)) <= 2 / 255


def test_manifest_contents(tmp_path, job, samples):
    write_dataset(samples[:3], tmp_path, job.manifest())
    m = read_manifest(tmp_path)
    assert m["count"] == 3 and m["seed"] == 7 and m["image_size"] == 128
    assert m["specs"][0]["kind"] == "text"
    assert [e["id"] for e in m["samples"]] == ["000000", "000001", "000002"]


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingManifestError):
        load_dataset(tmp_path)


def test_checksum_mismatch(tmp_path, samples):
    write_dataset(samples[:2], tmp_path)
    (tmp_path / "000001" / "ma.png").write_bytes(b"corrupt")
    with pytest.raises(ChecksumMismatchError):
        load_dataset(tmp_path)


def test_version_mismatch(tmp_path, samples):
    write_dataset(samples[:1], tmp_path)
    path = tmp_path / "manifest.json"
    m = json.loads(path.read_text())
    m["format_version"] = 99
    path.write_text(json.dumps(m))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_byte_identical_rewrites(tmp_path, job):
    for d in ("a", "b"):
        write_dataset(synthesize_dataset(job, 3), tmp_path / d, job.manifest())
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
