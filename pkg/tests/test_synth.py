import numpy as np
import pytest

from motif_removal.imaging import embed_motif, recover_latent
from motif_removal.motifs import PRESETS, MotifSpec, generate_motif, procedural_emblems
from motif_removal.synth import (
    PlacedMotif,
    PlacementError,
    PlacementParams,
    SynthesisJob,
    crop,
    layout_motifs,
    sample_patch,
    synthesize_dataset,
    synthesize_sample,
)

RECT = MotifSpec("shape", "rectangle", color_mode="random-gray", opacity_range=(0.4, 0.6))


@pytest.fixture(scope="module")
def bank():
    return procedural_emblems(8, seed=1, size=64)


def _flat(size=128, value=0.3):
    return np.full((size, size, 3), value)


def _translated(spec, tile, top, left, opacity):
    vm, support = generate_motif(spec, 0, tile)
    transform = np.array([[1.0, 0.0, left], [0.0, 1.0, top]])
    return PlacedMotif(spec, vm, support, transform, opacity, 0.0, max(tile))


class TestLayout:
    def test_pure_translation_without_rotation(self):
        params = PlacementParams(scale_range=(20, 20), rotation_range=(0, 0))
        for inst in layout_motifs((128, 128), [RECT], params, rng=1):
            np.testing.assert_array_equal(inst.transform[:, :2], np.eye(2))
            assert np.all(inst.transform[:, 2] == np.round(inst.transform[:, 2]))

    def test_determinism(self):
        params = PlacementParams(rng_seed=9)
        a = layout_motifs((256, 256), [PRESETS["text_color"], RECT], params)
        b = layout_motifs((256, 256), [PRESETS["text_color"], RECT], params)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.transform, y.transform)
            np.testing.assert_array_equal(x.support, y.support)
            assert x.opacity == y.opacity

    def test_opacity_sampler_statistics(self):
        params = PlacementParams(scale_range=(8, 16))
        rng = np.random.default_rng(0)
        ops = [
            inst.opacity
            for _ in range(100)
            for inst in layout_motifs((128, 128), [RECT], params, rng, count=10)
        ]
        ops = np.array(ops)
        assert len(ops) == 1000
        assert np.all((ops > 0.4) & (ops < 0.6))
        assert abs(ops.mean() - 0.5) < 0.02

    def test_count_bounds(self):
        params = PlacementParams(max_motifs_per_image=3)
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = len(layout_motifs((128, 128), [RECT], params, rng))
            assert 1 <= n <= 3
        with pytest.raises(PlacementError):
            layout_motifs((128, 128), [RECT], params, rng, count=4)

    def test_image_too_small(self):
        with pytest.raises(PlacementError):
            layout_motifs((10, 10), [RECT], PlacementParams(scale_range=(16, 32)))

    def test_no_crop_keeps_motifs_inside(self):
        params = PlacementParams(scale_range=(30, 120), allow_crop=False, rng_seed=3)
        rng = np.random.default_rng(3)
        for _ in range(10):
            for inst in layout_motifs((128, 128), [PRESETS["text_color"], RECT], params, rng):
                x0, y0, x1, y1 = inst.bounds()
                assert x0 >= -0.5 - 1e-6 and y0 >= -0.5 - 1e-6
                assert x1 <= 127.5 + 1e-6 and y1 <= 127.5 + 1e-6

    def test_rotation_within_range(self):
        params = PlacementParams(rotation_range=(-20, 20), rng_seed=4)
        for inst in layout_motifs((256, 256), [RECT], params, count=10):
            assert -20 <= inst.angle <= 20
            np.testing.assert_allclose(inst.transform[:, :2] @ inst.transform[:, :2].T, np.eye(2), atol=1e-12)


class TestSynthesizeSample:
    def test_single_motif_equals_one_matting(self):
        inst = _translated(RECT, (10, 12), 30, 40, 0.5)
        im = np.random.default_rng(0).random((128, 128, 3))
        s = synthesize_sample(im, [inst], rng=0)
        alpha = np.zeros((128, 128))
        alpha[30:40, 40:52] = 0.5
        vm = np.zeros_like(im)
        vm[30:40, 40:52] = inst.vm
        np.testing.assert_array_equal(s.alpha, alpha)
        np.testing.assert_array_equal(s.cr, embed_motif(im, vm, alpha))
        np.testing.assert_array_equal(s.ma, alpha > 0)

    def test_opaque_motif_copies_motif_pixels(self):
        spec = MotifSpec("text", "Wq", color_mode="black", opaque=True)
        placed = layout_motifs((128, 128), [spec], PlacementParams(rng_seed=5), count=3)
        s = synthesize_sample(_flat(), placed, rng=5)
        on = s.ma > 0
        assert on.any()
        np.testing.assert_array_equal(s.alpha[on], 1.0)
        np.testing.assert_array_equal(s.cr[on], s.vm[on])

    def test_opacity_variance_bounds(self):
        spec = MotifSpec("shape", "rectangle", "white", (0.2, 0.9), opacity_variance_pct=10)
        inst = _translated(spec, (100, 100), 10, 10, 0.5)
        samples = []
        for k in range(10):  # 10^5 pixels in total
            samples.append(synthesize_sample(_flat(value=0.5), [inst], rng=k).alpha[10:110, 10:110])
        a = np.concatenate(samples)
        assert a.size == 100_000
        assert a.min() >= 0.45 and a.max() <= 0.55
        assert a.std() > 0.02  # the field really varies

    def test_perturbation_shifts_at_most_one_pixel(self):
        spec = MotifSpec("shape", "rectangle", "white", (0.2, 0.9), perturb_max_shift=1.0)
        inst = _translated(spec, (20, 20), 50, 50, 0.5)
        s = synthesize_sample(_flat(), [inst], rng=1)
        assert np.all(s.alpha[:49] == 0) and np.all(s.alpha[:, :49] == 0)
        assert np.all(s.alpha[71:] == 0) and np.all(s.alpha[:, 71:] == 0)
        np.testing.assert_allclose(s.alpha[51:69, 51:69], 0.5)
        edge = s.alpha[50, 51:69]
        assert edge.min() < 0.5  # edges are jittered

    def test_blur_spreads_matte(self):
        spec = MotifSpec("shape", "rectangle", "white", (0.2, 0.9), blur_kernel=3)
        inst = _translated(spec, (20, 20), 50, 50, 0.5)
        s = synthesize_sample(_flat(), [inst], rng=0)
        assert 0 < s.alpha[49, 60] < 0.5
        assert s.alpha[48, 60] == 0
        np.testing.assert_allclose(s.alpha[55, 55], 0.5)

    def test_overlap_accumulates(self):
        a = _translated(RECT, (20, 20), 10, 10, 0.5)
        b = _translated(RECT, (20, 20), 20, 20, 0.4)
        im = np.random.default_rng(2).random((128, 128, 3))
        s = synthesize_sample(im, [a, b], rng=0)
        assert s.alpha[25, 25] == pytest.approx(1 - 0.5 * 0.6)
        sequential = embed_motif(embed_motif(im, _full(a, 128), _matte(a, 128)), _full(b, 128), _matte(b, 128))
        np.testing.assert_allclose(s.cr, sequential, atol=1e-12)
        np.testing.assert_allclose(recover_latent(s.cr, s.vm, s.alpha), im, atol=1e-12)

    def test_rejects_small_background(self):
        with pytest.raises(ValueError):
            synthesize_sample(np.zeros((100, 128, 3)), [])


def _full(inst, n):
    out = np.zeros((n, n, 3))
    t, l = int(inst.transform[1, 2]), int(inst.transform[0, 2])
    h, w = inst.support.shape
    out[t : t + h, l : l + w] = inst.vm
    return out


def _matte(inst, n):
    out = np.zeros((n, n))
    t, l = int(inst.transform[1, 2]), int(inst.transform[0, 2])
    h, w = inst.support.shape
    out[t : t + h, l : l + w] = inst.opacity * inst.support
    return out


@pytest.fixture(scope="module")
def preset_samples(backgrounds, bank):
    out = {}
    for name, spec in PRESETS.items():
        job = SynthesisJob(backgrounds, [spec], PlacementParams(rng_seed=11), 512, rasters=bank)
        out[name] = list(synthesize_dataset(job, 6))
    return out


class TestDatasetSynthesis:

    def test_mask_alpha_consistency(self, preset_samples):
        for group in preset_samples.values():
            for s in group:
                np.testing.assert_array_equal(s.ma > 0, s.alpha > 0)

    def test_reconstruction_oracle(self, preset_samples):
        for name, group in preset_samples.items():
            if PRESETS[name].opaque:
                continue
            for s in group:
                assert np.max(np.abs(recover_latent(s.cr, s.vm, s.alpha) - s.im)) < 1e-5

    def test_coverage_bound(self, preset_samples):
        for group in preset_samples.values():
            for s in group:
                assert 0 < s.ma.mean() < 0.6

    def test_determinism_and_workers(self, backgrounds, bank):
        job = SynthesisJob(backgrounds, [PRESETS["text_gray"], PRESETS["emoji"]], PlacementParams(rng_seed=3), 128, rasters=bank)
        a = list(synthesize_dataset(job, 5))
        b = list(synthesize_dataset(job, 5, workers=2))
        c = list(synthesize_dataset(job, 3, start=2))
        for x, y in zip(a, b):
            for k, v in x.planes().items():
                np.testing.assert_array_equal(v, y.planes()[k])
        for x, y in zip(a[2:], c):
            np.testing.assert_array_equal(x.cr, y.cr)

    def test_different_seeds_differ(self, backgrounds):
        mk = lambda s: SynthesisJob(backgrounds, [RECT], PlacementParams(rng_seed=s), 128).sample(0)
        assert not np.array_equal(mk(1).cr, mk(2).cr)


@pytest.fixture(scope="module")
def sample(backgrounds):
    return SynthesisJob(backgrounds, [RECT, PRESETS["text_color"]], PlacementParams(rng_seed=2), 512).sample(0)


class TestPatches:

    def test_full_size_is_identity(self, sample):
        p = sample_patch(sample, 512, rng=0)
        for k, v in sample.planes().items():
            np.testing.assert_array_equal(p.planes()[k], v)

    def test_offset_bookkeeping(self, sample):
        p = crop(sample, 10, 20, 128)
        assert p.ma[0, 0] == sample.ma[10, 20]
        np.testing.assert_array_equal(p.cr, sample.cr[10:138, 20:148])
        assert p.provenance["offset"] == (10, 20)

    def test_crop_of_crop_composes(self, sample):
        twice = crop(crop(sample, 10, 20, 200), 5, 7, 64)
        once = crop(sample, 15, 27, 64)
        for k, v in once.planes().items():
            np.testing.assert_array_equal(twice.planes()[k], v)
        assert twice.provenance["offset"] == once.provenance["offset"] == (15, 27)

    def test_patch_preserves_invariants(self, sample):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = sample_patch(sample, 128, rng)
            assert p.shape == (128, 128)
            np.testing.assert_array_equal(p.ma > 0, p.alpha > 0)
            np.testing.assert_allclose(p.cr, embed_motif(p.im, p.vm, p.alpha), atol=1e-12)

    def test_too_large(self, sample):
        with pytest.raises(ValueError):
            sample_patch(sample, 513)
