import pytest
import torch
import torch.nn as nn

from motif_removal.network import (
    ConfigError,
    DecodeSegment,
    InputShapeError,
    ModelConfig,
    build_model,
    count_parameters,
    segment_shapes,
)

TINY = dict(base_channels=8, res_blocks_per_segment=1)


def tiny(variant="baseline_shared_vm", **kw):
    return ModelConfig.for_variant(variant, **{**TINY, **kw})


def test_same_seed_identical_parameters():
    a = build_model(tiny(), seed=3).state_dict()
    b = build_model(tiny(), seed=3).state_dict()
    c = build_model(tiny(), seed=4).state_dict()
    assert a.keys() == b.keys()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_seed_does_not_touch_global_rng():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    build_model(tiny(), seed=5)
    assert torch.equal(torch.rand(3), expected)


def test_baseline_has_two_heads():
    model = build_model(tiny("baseline"))
    assert sorted(model.heads) == ["image", "mask"]
    out = model.eval()(torch.zeros(1, 3, 32, 32))
    assert out.motif is None and out.image is not None and out.mask is not None


def test_autoencoder_has_image_head_only():
    model = build_model(tiny("autoencoder"))
    assert list(model.heads) == ["image"]


@pytest.mark.parametrize(
    "kw",
    [
        dict(variant="autoencoder", shared_decode_levels=1),
        dict(variant="baseline_vm", shared_decode_levels=2),
        dict(variant="baseline_shared_vm", shared_decode_levels=0),
        dict(shared_decode_levels=6),
        dict(res_blocks_per_segment=0),
        dict(num_segments=4),
        dict(variant="unet"),
        dict(padding_mode="reflect"),
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_shared_levels_are_identical_objects():
    model = build_model(tiny(shared_decode_levels=2))
    img = model.decode_segments("image")
    vm = model.decode_segments("motif")
    mask = model.decode_segments("mask")
    assert len(img) == len(vm) == len(mask) == 5
    for j in range(5):
        ids_img = [id(p) for p in img[j].parameters()]
        ids_vm = [id(p) for p in vm[j].parameters()]
        assert (ids_img == ids_vm) == (j < 2)
        assert not set(ids_img) & {id(p) for p in mask[j].parameters()}
    # stored once under the canonical shared path
    names = [n for n, _ in model.named_parameters()]
    assert any(n.startswith("shared.level1.") for n in names)
    assert not any(n.startswith(("decoders.image.level0", "decoders.motif.level1")) for n in names)


def test_forward_shapes_and_ranges():
    model = build_model(ModelConfig(), seed=0).eval()
    x = torch.rand(2, 3, 128, 128) * 2 - 1
    with torch.no_grad():
        out = model(x)
    assert out.image.shape == (2, 3, 128, 128)
    assert out.mask.shape == (2, 1, 128, 128)
    assert out.motif.shape == (2, 3, 128, 128)
    assert 0 < out.mask.min() and out.mask.max() < 1
    assert out.image.abs().max() < 1 and out.motif.abs().max() < 1


def test_zero_input_outputs_finite():
    model = build_model(tiny()).eval()
    with torch.no_grad():
        out = model(torch.zeros(1, 3, 64, 96))
    for t in out:
        assert torch.isfinite(t).all()
    assert 0 < out.mask.min() and out.mask.max() < 1


def test_input_validation():
    model = build_model(tiny())
    with pytest.raises(InputShapeError):
        model(torch.zeros(1, 3, 100, 100))
    with pytest.raises(InputShapeError):
        model(torch.zeros(1, 1, 64, 64))
    with pytest.raises(InputShapeError):
        model(torch.zeros(3, 64, 64))


def test_inference_deterministic():
    model = build_model(tiny()).eval()
    x = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        a, b = model(x), model(x)
    assert all(torch.equal(p, q) for p, q in zip(a, b))


def test_encoder_shape_trace():
    model = build_model(ModelConfig(base_channels=32, res_blocks_per_segment=1))
    shapes = dict(segment_shapes(model, (128, 128)))
    enc = [shapes[f"encoder.{k}"] for k in range(5)]
    assert enc == [(32, 64, 64), (64, 32, 32), (128, 16, 16), (256, 8, 8), (512, 4, 4)]
    assert shapes["shared.level0"] == (256, 8, 8)
    assert shapes["decoders.mask.level4"] == (16, 128, 128)
    assert shapes["decoders.motif.level4"] == (16, 128, 128)


def test_parameter_count_ordering():
    seed = 1
    counts = {
        v: count_parameters(build_model(tiny(v), seed)) for v in ("autoencoder", "baseline", "baseline_vm", "baseline_shared_vm")
    }
    assert counts["autoencoder"] < counts["baseline"] < counts["baseline_vm"]
    assert counts["baseline_shared_vm"] < counts["baseline_vm"]
    deeper = count_parameters(build_model(tiny(shared_decode_levels=3), seed))
    assert deeper < counts["baseline_shared_vm"]


def test_shared_counted_once():
    model = build_model(tiny())
    flat = sum(p.numel() for _, p in model.named_parameters(remove_duplicate=False))
    assert count_parameters(model) == flat
    extra = sum(p.numel() for seg in model.decode_segments("motif")[:2] for p in seg.parameters())
    by_branch = sum(
        p.numel() for b in model.config.branches for seg in model.decode_segments(b) for p in seg.parameters()
    )
    private = sum(p.numel() for n, p in model.named_parameters() if n.startswith(("shared", "decoders")))
    assert by_branch == private + extra


def test_upsample_matches_padded_transpose_conv():
    torch.manual_seed(0)
    seg = DecodeSegment(4, 4, 2, 1)
    ref = nn.ConvTranspose2d(4, 2, 3, stride=2, padding=1, output_padding=1)
    ref.load_state_dict(seg.up.state_dict())
    x = torch.randn(2, 4, 5, 7)
    torch.testing.assert_close(seg.upsample(x), ref(x), rtol=0, atol=1e-6)


def test_translation_covariance_circular():
    model = build_model(tiny(padding_mode="circular"), seed=2).eval()
    torch.manual_seed(0)
    x = torch.rand(1, 3, 128, 128) * 2 - 1
    shifted = torch.roll(x, shifts=(32, -32), dims=(2, 3))
    with torch.no_grad():
        a, b = model(x), model(shifted)
    for p, q in zip(a, b):
        diff = (torch.roll(p, shifts=(32, -32), dims=(2, 3)) - q).abs().max()
        assert diff < 1e-4
