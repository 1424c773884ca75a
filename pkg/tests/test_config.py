import pytest

from freqmoa.config import (TrainConfig, config_from_dict, config_to_dict,
                            load_config, replace_fields)
from freqmoa.errors import ConfigError


def test_empty_config_gives_defaults():
    cfg = config_from_dict({})
    assert cfg.mode == "dg"
    assert cfg.backbone.image_size == 32
    assert cfg.backbone.patch == 4
    assert cfg.backbone.depth == 8
    assert cfg.backbone.dim == 64
    assert cfg.adapter.dim == 16
    assert cfg.adapter.cutoff == 0.3
    assert cfg.adapter.freq_layers == (5, 6, 7)
    assert cfg.adapter.alpha_init == 0.01
    assert cfg.adapter.experts.spatial and cfg.adapter.experts.low
    assert cfg.train.lr_decoder == 1e-4
    assert cfg.train.lr_peft == 1e-4
    assert cfg.train.lambda_uda == 0.5
    assert cfg.train.ema_alpha == 0.99
    assert cfg.train.eval_interval == 200


def test_unknown_keys_named_in_error():
    with pytest.raises(ConfigError, match="'train.lrr'"):
        config_from_dict({"train": {"lrr": 1}})
    with pytest.raises(ConfigError, match="'trian'"):
        config_from_dict({"trian": {}})
    with pytest.raises(ConfigError, match="'adapter.experts.spatia'"):
        config_from_dict({"adapter": {"experts": {"spatia": True}}})


def test_type_checks():
    with pytest.raises(ConfigError, match="integer"):
        config_from_dict({"train": {"steps": "many"}})
    with pytest.raises(ConfigError, match="integer"):
        config_from_dict({"train": {"steps": True}})
    with pytest.raises(ConfigError, match="number"):
        config_from_dict({"train": {"lr_peft": "fast"}})
    with pytest.raises(ConfigError, match="boolean"):
        config_from_dict({"adapter": {"experts": {"low": 1}}})
    with pytest.raises(ConfigError, match="list of integers"):
        config_from_dict({"adapter": {"freq_layers": [1.5]}})
    with pytest.raises(ConfigError, match="mapping"):
        config_from_dict({"train": 3})


def test_int_accepted_for_float_field():
    cfg = config_from_dict({"train": {"lambda_uda": 1}})
    assert cfg.train.lambda_uda == 1.0
    assert isinstance(cfg.train.lambda_uda, float)


def test_validation_rules():
    with pytest.raises(ConfigError, match="mode"):
        config_from_dict({"mode": "finetune"})
    with pytest.raises(ConfigError, match="cutoff"):
        config_from_dict({"adapter": {"cutoff": 1.5}})
    with pytest.raises(ConfigError, match="freq_layers entry"):
        config_from_dict({"adapter": {"freq_layers": [8]}})
    with pytest.raises(ConfigError, match="multiple"):
        config_from_dict({"backbone": {"image_size": 30}})
    with pytest.raises(ConfigError, match="ema_alpha"):
        config_from_dict({"train": {"ema_alpha": 1.0}})
    with pytest.raises(ConfigError, match="lr_decoder"):
        config_from_dict({"train": {"lr_decoder": 0}})
    with pytest.raises(ConfigError, match="batch"):
        config_from_dict({"train": {"batch": 0}})


def test_zero_steps_allowed():
    cfg = config_from_dict({"train": {"steps": 0}})
    assert cfg.train.steps == 0


def test_yaml_file_roundtrip(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(
        "mode: da\n"
        "adapter:\n"
        "  cutoff: 0.2\n"
        "  freq_layers: [5, 6, 7]\n"
        "  experts: {spatial: true, low: true, high: false}\n"
        "train:\n"
        "  steps: 10\n"
        "  seed: 42\n"
        "data:\n"
        "  benchmark: /tmp/bench\n"
        "out: {dir: /tmp/out}\n")
    cfg = load_config(p)
    assert cfg.mode == "da"
    assert cfg.adapter.cutoff == 0.2
    assert not cfg.adapter.experts.high
    assert cfg.train.seed == 42
    assert cfg.data.benchmark == "/tmp/bench"
    assert cfg.out.dir == "/tmp/out"


def test_empty_yaml_file(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert load_config(p) == TrainConfig()


def test_dict_roundtrip():
    cfg = config_from_dict({"mode": "da", "train": {"seed": 7}})
    raw = config_to_dict(cfg)
    assert raw["mode"] == "da"
    assert raw["train"]["seed"] == 7
    assert raw["adapter"]["experts"]["high"] is True


def test_replace_fields():
    cfg = config_from_dict({})
    out = replace_fields(cfg, {"train.seed": 9, "adapter.cutoff": 0.1,
                               "out.dir": "elsewhere"})
    assert out.train.seed == 9
    assert out.adapter.cutoff == 0.1
    assert out.out.dir == "elsewhere"
    # original untouched
    assert cfg.train.seed == 0
    with pytest.raises(ConfigError):
        replace_fields(cfg, {"adapter.cutoff": 2.0})
