"""Run configuration: YAML in, validated dataclass tree out.

Unknown keys are rejected with the full dotted path so typos fail fast
instead of silently running defaults. All fields have defaults; an
empty file is a valid config.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .errors import ConfigError

MODES = ("pretrain", "dg", "da")


@dataclass(frozen=True)
class BackboneCfg:
    image_size: int = 32
    patch: int = 4
    depth: int = 8
    dim: int = 64
    heads: int = 4


@dataclass(frozen=True)
class ExpertToggles:
    spatial: bool = True
    low: bool = True
    high: bool = True


@dataclass(frozen=True)
class AdapterCfg:
    dim: int = 16
    cutoff: float = 0.3
    freq_layers: tuple = (5, 6, 7)
    alpha_init: float = 0.01
    experts: ExpertToggles = field(default_factory=ExpertToggles)


@dataclass(frozen=True)
class TrainCfg:
    steps: int = 2000
    batch: int = 4
    lr_decoder: float = 1e-4
    lr_peft: float = 1e-4
    lr_pretrain: float = 1e-3
    lambda_uda: float = 0.5
    ema_alpha: float = 0.99
    seed: int = 0
    eval_interval: int = 200


@dataclass(frozen=True)
class DataCfg:
    benchmark: str = ""
    pretrained: str = ""


@dataclass(frozen=True)
class OutCfg:
    dir: str = "out"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "dg"
    backbone: BackboneCfg = field(default_factory=BackboneCfg)
    adapter: AdapterCfg = field(default_factory=AdapterCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    data: DataCfg = field(default_factory=DataCfg)
    out: OutCfg = field(default_factory=OutCfg)


_SECTIONS = {"backbone": BackboneCfg, "adapter": AdapterCfg,
             "train": TrainCfg, "data": DataCfg, "out": OutCfg}


def _coerce(path, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path} must be a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if kind is tuple:  # list of ints
        if not isinstance(value, (list, tuple)) or any(
                isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{path} must be a list of integers, got {value!r}")
        return tuple(value)
    raise AssertionError(f"unhandled field kind {kind}")


def _build_section(cls, mapping, prefix):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in mapping.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in fields:
            raise ConfigError(f"unknown key {path!r}")
        default = getattr(cls(), key)
        if key == "experts":
            kwargs[key] = _build_section(ExpertToggles, value, path)
        elif key == "freq_layers":
            kwargs[key] = _coerce(path, value, tuple)
        else:
            kwargs[key] = _coerce(path, value, type(default))
    return cls(**kwargs)


def config_from_dict(user):
    """Build a TrainConfig from a nested dict, rejecting unknown keys."""
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError("config root must be a mapping")
    kwargs = {}
    for key, value in user.items():
        if key == "mode":
            kwargs["mode"] = _coerce("mode", value, str)
        elif key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    cfg = TrainConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path):
    with open(path) as f:
        raw = yaml.safe_load(f)
    return config_from_dict(raw)


def validate_config(cfg):
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    b, a, t = cfg.backbone, cfg.adapter, cfg.train
    if b.image_size <= 0 or b.patch <= 0 or b.image_size % b.patch != 0:
        raise ConfigError("backbone.image_size must be a positive multiple "
                          "of backbone.patch")
    if b.depth <= 0 or b.dim <= 0 or b.heads <= 0 or b.dim % b.heads != 0:
        raise ConfigError("backbone.dim must be a positive multiple of "
                          "backbone.heads and depth positive")
    if not 0.0 <= a.cutoff <= 1.0:
        raise ConfigError(f"adapter.cutoff must be in [0,1], got {a.cutoff}")
    if a.dim <= 0:
        raise ConfigError("adapter.dim must be positive")
    for layer in a.freq_layers:
        if not 0 <= layer < b.depth:
            raise ConfigError(f"adapter.freq_layers entry {layer} outside "
                              f"depth {b.depth}")
    if t.steps < 0 or t.batch < 1 or t.eval_interval < 1:
        raise ConfigError("train.steps must be >= 0, train.batch and "
                          "train.eval_interval >= 1")
    if t.lambda_uda < 0:
        raise ConfigError("train.lambda_uda must be non-negative")
    if not 0.0 <= t.ema_alpha < 1.0:
        raise ConfigError("train.ema_alpha must be in [0,1)")
    for name in ("lr_decoder", "lr_peft", "lr_pretrain"):
        if getattr(t, name) <= 0:
            raise ConfigError(f"train.{name} must be positive")


def config_to_dict(cfg):
    return asdict(cfg)


def replace_fields(cfg, updates):
    """Rebuild a TrainConfig with dotted-path overrides, e.g.
    replace_fields(cfg, {"train.seed": 3, "out.dir": "x"})."""
    raw = config_to_dict(cfg)
    for path, value in updates.items():
        node = raw
        parts = path.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(_delistify(raw))


def _delistify(node):
    if isinstance(node, dict):
        return {k: _delistify(v) for k, v in node.items()}
    if isinstance(node, tuple):
        return list(node)
    return node
