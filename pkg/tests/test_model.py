import numpy as np
import pytest

from freqmoa.adapters import build_moa
from freqmoa.backbone import TokenDecoder, ViTBackbone, ViTConfig
from freqmoa.model import SegModel, clone_teacher, load_param_arrays

CFG = ViTConfig(image_size=8, patch_size=4, depth=2, dim=8, heads=2,
                num_classes=3)


def make_model(seed=0, with_moa=True):
    rng = np.random.default_rng(seed)
    backbone = ViTBackbone(CFG, rng)
    backbone.set_frozen(True)
    decoder = TokenDecoder(CFG.dim, CFG.num_classes, CFG.grid, CFG.patch_size,
                           rng)
    moa = build_moa(CFG.depth, CFG.dim, CFG.grid, rng, rank=4,
                    freq_layers=(1,)) if with_moa else None
    return SegModel(backbone, decoder, moa)


def test_param_group_names():
    model = make_model()
    names = [n for n, _ in model.trainable_params()]
    assert all(n.startswith(("decoder/", "peft/")) for n in names)
    assert any(n.startswith("peft/l1/low/") for n in names)
    backbone_names = [n for n, _ in model.backbone.named_params()]
    assert all(n.startswith("backbone/") for n in backbone_names)
    assert len(set(names)) == len(names)


def test_logits_and_predict_shapes():
    model = make_model()
    img = np.random.default_rng(1).uniform(size=(3, 8, 8))
    assert model.logits(img).shape == (64, 3)
    assert model.predict(img).shape == (8, 8)


def test_teacher_clone_matches_then_decouples():
    model = make_model(seed=2)
    img = np.random.default_rng(3).uniform(size=(3, 8, 8))
    # make the student nontrivial before cloning
    for _, t in model.trainable_params():
        t.data += 0.01 * np.random.default_rng(4).normal(size=t.data.shape)
    teacher = clone_teacher(model)
    assert np.array_equal(teacher.logits(img).data, model.logits(img).data)
    assert all(not t.requires_grad for _, t in teacher.trainable_params())
    # teacher shares the frozen backbone object
    assert teacher.backbone is model.backbone
    # mutating the student must not leak into the teacher
    model.decoder.params["w2"].data += 1.0
    assert not np.array_equal(teacher.logits(img).data, model.logits(img).data)


def test_teacher_forward_builds_no_graph():
    model = make_model(seed=5)
    teacher = clone_teacher(model)
    img = np.random.default_rng(6).uniform(size=(3, 8, 8))
    out = teacher.logits(img)
    assert out._parents == ()
    assert not out.requires_grad


def test_load_param_arrays_roundtrip():
    model = make_model(seed=7)
    arrays = {n: t.data.copy() for n, t in model.all_params()}
    other = make_model(seed=8)
    load_param_arrays(other.all_params(), arrays)
    img = np.random.default_rng(9).uniform(size=(3, 8, 8))
    assert np.array_equal(other.logits(img).data, model.logits(img).data)


def test_load_param_arrays_validates():
    model = make_model(seed=10)
    arrays = {n: t.data.copy() for n, t in model.all_params()}
    bad = dict(arrays)
    bad["decoder/w1"] = np.zeros((2, 2))
    with pytest.raises(ValueError, match="shape mismatch"):
        load_param_arrays(model.all_params(), bad)
    with pytest.raises(KeyError, match="no target"):
        load_param_arrays(model.all_params(), {**arrays, "decoder/extra": np.zeros(1)})
    del arrays["decoder/w1"]
    with pytest.raises(KeyError, match="missing"):
        load_param_arrays(model.all_params(), arrays)


def test_model_without_adapters():
    model = make_model(with_moa=False)
    img = np.random.default_rng(11).uniform(size=(3, 8, 8))
    assert model.peft_params() == []
    assert model.logits(img).shape == (64, 3)
