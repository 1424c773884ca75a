import numpy as np
import pytest

from freqmoa import autodiff as ad
from freqmoa.autodiff import Tensor
from freqmoa.backbone import (TokenDecoder, ViTBackbone, ViTConfig,
                              param_checksum, patchify, pretrain_source,
                              sinusoidal_positions)
from freqmoa.data import DomainSpec, evaluate, generate_sample
from freqmoa.errors import NumericError

from helpers import max_rel_err, numeric_grad

TINY = ViTConfig(image_size=8, patch_size=4, depth=2, dim=8, heads=2,
                 num_classes=3)


def tiny_model(seed=0, cfg=TINY):
    rng = np.random.default_rng(seed)
    backbone = ViTBackbone(cfg, rng)
    decoder = TokenDecoder(cfg.dim, cfg.num_classes, cfg.grid, cfg.patch_size,
                           rng)
    return backbone, decoder


def test_config_validation():
    with pytest.raises(ValueError, match="divisible by patch"):
        ViTConfig(image_size=30, patch_size=4)
    with pytest.raises(ValueError, match="divisible by heads"):
        ViTConfig(dim=66, heads=4)


def test_sinusoidal_first_row():
    pe = sinusoidal_positions(3, 4)
    assert np.allclose(pe[0], [0.0, 1.0, 0.0, 1.0])
    assert np.isclose(pe[1, 0], np.sin(1.0))
    assert np.isclose(pe[1, 1], np.cos(1.0))


def test_sinusoidal_rows_distinct():
    pe = sinusoidal_positions(16, 8)
    assert len({tuple(r) for r in np.round(pe, 12)}) == 16


def test_patchify_layout():
    img = np.arange(3 * 8 * 8, dtype=np.float64).reshape(3, 8, 8)
    rows = patchify(img, 4)
    assert rows.shape == (4, 48)
    # token 0 is the top-left patch, channel-major then row-major
    assert np.array_equal(rows[0, :16], img[0, :4, :4].ravel())
    # token 1 is the top-right patch
    assert np.array_equal(rows[1, :16], img[0, :4, 4:].ravel())


def test_forward_shapes_and_determinism():
    backbone, decoder = tiny_model()
    img = np.random.default_rng(1).uniform(size=(3, 8, 8))
    feats = backbone.forward_features(img)
    assert len(feats) == TINY.depth
    assert all(f.shape == (TINY.tokens, TINY.dim) for f in feats)
    logits = decoder.logits(feats[-1])
    assert logits.shape == (64, 3)

    backbone2, decoder2 = tiny_model()
    feats2 = backbone2.forward_features(img)
    assert np.array_equal(feats[-1].data, feats2[-1].data)


def test_attention_rows_are_distributions():
    backbone, _ = tiny_model()
    img = np.random.default_rng(2).uniform(size=(3, 8, 8))
    sink = []
    backbone.forward_features(img, attn_sink=sink)
    assert len(sink) == TINY.depth * TINY.heads
    for att in sink:
        assert att.shape == (TINY.tokens, TINY.tokens)
        assert att.min() >= 0.0
        assert np.allclose(att.sum(axis=1), 1.0, atol=1e-12)


def test_hook_rewrites_feed_next_block():
    backbone, _ = tiny_model()
    img = np.random.default_rng(3).uniform(size=(3, 8, 8))
    plain = backbone.forward_features(img)

    def bump(i, feat):
        if i == 0:
            return ad.add(feat, Tensor(np.ones(feat.shape)))
        return feat

    hooked = backbone.forward_features(img, hook=bump)
    assert np.array_equal(hooked[0].data, plain[0].data + 1.0)
    # the rewrite must propagate into block 1
    assert not np.allclose(hooked[1].data, plain[1].data)


def test_nonfinite_features_named_by_block():
    backbone, _ = tiny_model()
    img = np.random.default_rng(4).uniform(size=(3, 8, 8))

    def poison(i, feat):
        if i == 1:
            bad = np.full(feat.shape, np.nan)
            return Tensor(bad)
        return feat

    with pytest.raises(NumericError, match="block 1"):
        backbone.forward_features(img, hook=poison)


def test_decoder_constant_within_patch():
    backbone, decoder = tiny_model()
    img = np.random.default_rng(5).uniform(size=(3, 8, 8))
    logits = decoder.logits(backbone.forward_features(img)[-1]).data
    pix = logits.reshape(8, 8, 3)
    for r in range(0, 8, 4):
        for c in range(0, 8, 4):
            block = pix[r:r + 4, c:c + 4]
            assert np.array_equal(block, np.broadcast_to(block[0, 0], block.shape))


def test_decoder_predict_matches_logits_argmax():
    backbone, decoder = tiny_model()
    img = np.random.default_rng(6).uniform(size=(3, 8, 8))
    feat = backbone.forward_features(img)[-1]
    via_logits = np.argmax(decoder.logits(feat).data, axis=1).reshape(8, 8)
    assert np.array_equal(decoder.predict(feat.data), via_logits)


def test_freeze_flag_and_checksum():
    backbone, _ = tiny_model()
    backbone.set_frozen(True)
    assert backbone.frozen
    assert all(not t.requires_grad for _, t in backbone.named_params())
    before = param_checksum(backbone.named_params())
    assert param_checksum(backbone.named_params()) == before
    backbone.params["embed/b"].data[0] += 1e-9
    assert param_checksum(backbone.named_params()) != before


def test_full_model_gradients_match_finite_differences():
    backbone, decoder = tiny_model(seed=7)
    rng = np.random.default_rng(8)
    img = rng.uniform(size=(3, 8, 8))
    labels = rng.integers(0, 3, size=64)

    def loss_value():
        feat = backbone.forward_features(img)[-1]
        return float(ad.cross_entropy(decoder.logits(feat), labels).data)

    feat = backbone.forward_features(img)[-1]
    loss = ad.cross_entropy(decoder.logits(feat), labels)
    ad.backward(loss)

    checks = [
        backbone.params["embed/w"],
        backbone.params["b0/attn/wq"],
        backbone.params["b1/ln1/g"],
        backbone.params["b0/mlp/b1"],
        decoder.params["w2"],
    ]
    for t in checks:
        fd = numeric_grad(loss_value, t.data)
        assert max_rel_err(t.grad, fd, floor=1e-5) < 1e-4


def test_pretrain_fits_source():
    spec = DomainSpec(
        palette=((0.1, 0.2, 0.8), (0.8, 0.2, 0.1), (0.2, 0.8, 0.2),
                 (0.8, 0.8, 0.1)),
        texture_freq=(0, 0, 0, 0), noise_sigma=0.01)
    samples = [generate_sample(spec, seed=i, size=16) for i in range(12)]
    cfg = ViTConfig(image_size=16, patch_size=4, depth=2, dim=16, heads=2,
                    num_classes=4)
    losses = []
    backbone, decoder = pretrain_source(cfg, samples, steps=120, lr=3e-3,
                                        batch=4, seed=0,
                                        callback=lambda s, l: losses.append(l))
    assert len(losses) == 120
    assert np.mean(losses[-10:]) < 0.35 * np.mean(losses[:10])
    preds = []
    for s in samples:
        feats = backbone.forward_features(s.image)
        preds.append(decoder.predict(feats[-1].data))
    _, miou = evaluate(preds, [s.label for s in samples], 4)
    assert miou > 0.7


def test_pretrain_deterministic():
    spec = DomainSpec(palette=((0.1, 0.1, 0.8), (0.8, 0.1, 0.1)),
                      texture_freq=(0, 0), noise_sigma=0.02)
    samples = [generate_sample(spec, seed=i, size=8) for i in range(4)]
    cfg = ViTConfig(image_size=8, patch_size=4, depth=1, dim=8, heads=2,
                    num_classes=2)
    b1, d1 = pretrain_source(cfg, samples, steps=10, seed=3)
    b2, d2 = pretrain_source(cfg, samples, steps=10, seed=3)
    assert param_checksum(b1.named_params()) == param_checksum(b2.named_params())
    assert param_checksum(d1.named_params()) == param_checksum(d2.named_params())
