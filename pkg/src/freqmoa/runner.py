"""Experiment orchestration: configured runs, metrics, resume, sweeps.

A run is fully determined by (config, seed): model init draws from a
seed-keyed generator, the training loop draws batches and mix choices
from a second stream whose bit-level state is serialized into the
checkpoint, and metric rows accumulate in the checkpoint as well, so a
resumed run reproduces the uninterrupted run's CSV byte for byte.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .adapters import EXPERT_KINDS, build_moa
from .backbone import TokenDecoder, ViTBackbone, ViTConfig
from .checkpoint import (load_checkpoint, rng_from_json, rng_state_to_json,
                         save_checkpoint)
from .config import (config_from_dict, config_to_dict, replace_fields,
                     validate_config)
from .data import load_benchmark
from .errors import ConfigError, NumericError
from .model import SegModel, clone_teacher, load_param_arrays
from .optim import AdamW
from .trainer import LossReport, dg_step, evaluate_model, uda_step

WEIGHT_DECAY = 0.01
CHECKPOINT_NAME = "checkpoint.eadk"
METRICS_NAME = "metrics.csv"
FIGURE_NAME = "metrics.png"


def metric_columns(num_classes):
    cols = ["step", "l_src", "l_mix", "total", "source_miou", "target_miou"]
    cols += [f"source_iou_{i}" for i in range(num_classes)]
    cols += [f"target_iou_{i}" for i in range(num_classes)]
    return cols


def format_cell(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def write_metrics_csv(path, columns, rows):
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(format_cell(v) for v in row) + "\n")


def vit_config(cfg, num_classes):
    b = cfg.backbone
    return ViTConfig(image_size=b.image_size, patch_size=b.patch,
                     depth=b.depth, dim=b.dim, heads=b.heads,
                     num_classes=num_classes)


def build_model(cfg, num_classes, rng):
    vit = vit_config(cfg, num_classes)
    backbone = ViTBackbone(vit, rng)
    decoder = TokenDecoder(vit.dim, num_classes, vit.grid, vit.patch_size, rng)
    moa = None
    if cfg.mode != "pretrain":
        enabled = tuple(k for k in EXPERT_KINDS
                        if getattr(cfg.adapter.experts, k))
        if enabled:
            moa = build_moa(vit.depth, vit.dim, vit.grid, rng,
                            rank=cfg.adapter.dim, rho=cfg.adapter.cutoff,
                            freq_layers=cfg.adapter.freq_layers,
                            alpha_init=cfg.adapter.alpha_init,
                            enabled=enabled)
            if all(layer is None for layer in moa.layers):
                moa = None
    return SegModel(backbone, decoder, moa)


def _load_pretrained(model, path):
    try:
        arrays, meta = load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read pretrained checkpoint {path}: {exc}")
    wanted = dict(model.backbone.named_params() + model.decoder_params())
    subset = {k: v for k, v in arrays.items()
              if k.split("/")[0] in ("backbone", "decoder")}
    load_param_arrays(list(wanted.items()), subset, strict=True)


def _eval_row(model, bench, report):
    src_iou, src_miou = evaluate_model(model, bench.source_val,
                                       bench.class_count)
    tgt_iou, tgt_miou = evaluate_model(model, bench.target_val,
                                       bench.class_count)
    return ([report.step, report.l_src, report.l_mix, report.total,
             src_miou, tgt_miou] + list(src_iou) + list(tgt_iou))


def _resume_mismatch(echo, current):
    """First dotted path where two config echoes disagree, ignoring
    fields a resumed run may legitimately change."""
    skip = {("train", "steps"), ("out", "dir")}

    def walk(a, b, trail):
        if isinstance(a, dict) and isinstance(b, dict):
            for key in sorted(set(a) | set(b)):
                hit = walk(a.get(key), b.get(key), trail + (key,))
                if hit:
                    return hit
            return None
        if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
            a, b = list(a), list(b)
        if trail in skip or a == b:
            return None
        return ".".join(trail)

    return walk(echo, current, ())


def run_experiment(cfg, resume=None):
    """Execute one configured run; returns a summary dict.

    Writes metrics.csv, metrics.png, and checkpoint.eadk into out.dir.
    """
    validate_config(cfg)
    if not cfg.data.benchmark:
        raise ConfigError("data.benchmark is required")
    try:
        bench = load_benchmark(cfg.data.benchmark)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load benchmark {cfg.data.benchmark}: {exc}")
    if cfg.backbone.image_size != bench.size:
        raise ConfigError(
            f"backbone.image_size {cfg.backbone.image_size} does not match "
            f"benchmark sample size {bench.size}")

    rng_init = np.random.default_rng(cfg.train.seed)
    model = build_model(cfg, bench.class_count, rng_init)

    if cfg.mode == "pretrain":
        groups = [{"params": model.backbone.named_params()
                   + model.decoder_params(),
                   "lr": cfg.train.lr_pretrain, "weight_decay": 0.0}]
    else:
        if not cfg.data.pretrained:
            raise ConfigError("data.pretrained is required for dg/da runs")
        _load_pretrained(model, cfg.data.pretrained)
        model.backbone.set_frozen(True)
        groups = [{"params": model.decoder_params(), "lr": cfg.train.lr_decoder,
                   "weight_decay": WEIGHT_DECAY}]
        if model.moa is not None:
            groups.append({"params": model.peft_params(),
                           "lr": cfg.train.lr_peft,
                           "weight_decay": WEIGHT_DECAY})
    opt = AdamW(groups)
    teacher = clone_teacher(model) if cfg.mode == "da" else None

    rng_run = np.random.default_rng([cfg.train.seed, 1])
    rows = []
    start_step = 0

    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        mismatch = _resume_mismatch(meta.get("config"), config_to_dict(cfg))
        if mismatch:
            raise ConfigError(f"resume config mismatch at {mismatch}")
        load_param_arrays(model.all_params(),
                          {k: v for k, v in arrays.items()
                           if k.split("/")[0] in ("backbone", "decoder",
                                                  "peft")},
                          strict=True)
        opt.load_state({k[len("optim/"):]: v for k, v in arrays.items()
                        if k.startswith("optim/")}, meta["optim_t"])
        if teacher is not None:
            load_param_arrays(teacher.trainable_params(),
                              {k[len("teacher/"):]: v
                               for k, v in arrays.items()
                               if k.startswith("teacher/")}, strict=True)
        rng_run = rng_from_json(meta["rng_state"])
        rows = [list(r) for r in meta["metrics"]["rows"]]
        start_step = int(meta["step"])
        if start_step > cfg.train.steps:
            raise ConfigError(
                f"checkpoint is at step {start_step}, beyond train.steps "
                f"{cfg.train.steps}")
    else:
        rows.append(_eval_row(model, bench,
                              LossReport(0, math.nan, math.nan, math.nan)))

    frozen_checksum = (None if cfg.mode == "pretrain"
                       else model.backbone_checksum())
    n_src = len(bench.source_train)
    n_tgt = len(bench.target_train)

    for step in range(start_step + 1, cfg.train.steps + 1):
        idx_s = rng_run.integers(0, n_src, size=cfg.train.batch)
        batch = [bench.source_train[i] for i in idx_s]
        if cfg.mode == "da":
            idx_t = rng_run.integers(0, n_tgt, size=cfg.train.batch)
            targets = [bench.target_train[i] for i in idx_t]
            report = uda_step(model, teacher, opt, batch, targets,
                              cfg.train.lambda_uda, cfg.train.ema_alpha,
                              rng_run, step)
        else:
            report = dg_step(model, opt, batch, step)
        if step % cfg.train.eval_interval == 0 or step == cfg.train.steps:
            rows.append(_eval_row(model, bench, report))

    if frozen_checksum is not None and \
            model.backbone_checksum() != frozen_checksum:
        raise RuntimeError("frozen backbone parameters drifted during the run")

    os.makedirs(cfg.out.dir, exist_ok=True)
    columns = metric_columns(bench.class_count)
    csv_path = os.path.join(cfg.out.dir, METRICS_NAME)
    write_metrics_csv(csv_path, columns, rows)

    from .plots import plot_metrics
    fig_path = os.path.join(cfg.out.dir, FIGURE_NAME)
    plot_metrics(columns, rows, fig_path)

    arrays = {name: t.data for name, t in model.all_params()}
    for name, arr in opt.state_arrays().items():
        arrays[f"optim/{name}"] = arr
    if teacher is not None:
        for name, t in teacher.trainable_params():
            arrays[f"teacher/{name}"] = t.data
    meta = {"step": cfg.train.steps, "mode": cfg.mode,
            "config": config_to_dict(cfg),
            "rng_state": rng_state_to_json(rng_run),
            "optim_t": opt.t,
            "metrics": {"columns": columns, "rows": rows}}
    ckpt_path = os.path.join(cfg.out.dir, CHECKPOINT_NAME)
    save_checkpoint(ckpt_path, arrays, meta)

    final = rows[-1]
    summary = {"mode": cfg.mode, "steps": cfg.train.steps,
               "source_miou": float(final[columns.index("source_miou")]),
               "target_miou": float(final[columns.index("target_miou")]),
               "out_dir": cfg.out.dir, "checkpoint": ckpt_path,
               "metrics_csv": csv_path}
    return summary


def model_from_checkpoint(ckpt_path, bench_dir=None):
    """Rebuild the exact model a checkpoint describes.

    Returns (model, cfg, bench, meta); bench_dir overrides the
    benchmark path recorded in the checkpoint's config echo.
    """
    try:
        arrays, meta = load_checkpoint(ckpt_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {ckpt_path}: {exc}")
    cfg = config_from_dict(meta["config"])
    if bench_dir:
        cfg = replace_fields(cfg, {"data.benchmark": str(bench_dir)})
    bench = load_benchmark(cfg.data.benchmark)
    model = build_model(cfg, bench.class_count,
                        np.random.default_rng(cfg.train.seed))
    load_param_arrays(model.all_params(),
                      {k: v for k, v in arrays.items()
                       if k.split("/")[0] in ("backbone", "decoder", "peft")},
                      strict=True)
    if cfg.mode != "pretrain":
        model.backbone.set_frozen(True)
    return model, cfg, bench, meta


def evaluate_checkpoint(ckpt_path, bench_dir=None):
    """Score a checkpointed model on both val splits."""
    model, cfg, bench, meta = model_from_checkpoint(ckpt_path, bench_dir)
    src_iou, src_miou = evaluate_model(model, bench.source_val,
                                       bench.class_count)
    tgt_iou, tgt_miou = evaluate_model(model, bench.target_val,
                                       bench.class_count)
    return {"mode": cfg.mode, "steps": int(meta["step"]),
            "source_miou": src_miou, "target_miou": tgt_miou,
            "source_iou": list(src_iou), "target_iou": list(tgt_iou)}


SWEEP_AXES = ("adapter.cutoff", "adapter.dim", "adapter.freq_layers")


def parse_sweep_value(axis, token, depth):
    token = token.strip()
    if axis == "adapter.cutoff":
        return float(token)
    if axis == "adapter.dim":
        return int(token)
    if axis == "adapter.freq_layers":
        presets = {"first-3": list(range(3)),
                   "last-3": list(range(depth - 3, depth)),
                   "last-6": list(range(depth - 6, depth)),
                   "all": list(range(depth))}
        if token in presets:
            return [i for i in presets[token] if 0 <= i < depth]
        return [int(t) for t in token.split(":")]
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def _sweep_worker(payload):
    raw_cfg, token = payload
    cfg = config_from_dict(raw_cfg)
    try:
        summary = run_experiment(cfg)
        return {"value": token, "status": "ok",
                "source_miou": summary["source_miou"],
                "target_miou": summary["target_miou"]}
    except NumericError as exc:
        return {"value": token, "status": f"numeric-error: {exc}",
                "source_miou": math.nan, "target_miou": math.nan}


def run_sweep(cfg, axis, tokens, out_dir, workers=1):
    """Run one config per value of the swept field and aggregate, writing
    sweep.csv and sweep.png. A numeric failure marks its row and the
    sweep continues."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    depth = cfg.backbone.depth
    parsed = [(tok, parse_sweep_value(axis, tok, depth)) for tok in tokens]
    if axis != "adapter.freq_layers":
        parsed.sort(key=lambda pair: pair[1])
    jobs = []
    for token, value in parsed:
        sub_dir = os.path.join(out_dir, f"{axis.split('.')[-1]}-{token}")
        sub = replace_fields(cfg, {axis: value, "out.dir": sub_dir})
        jobs.append((config_to_dict(sub), token))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(job) for job in jobs]

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w") as f:
        f.write("axis,value,status,source_miou,target_miou\n")
        for r in results:
            status = r["status"].split(":")[0]
            f.write(f"{axis},{r['value']},{status},"
                    f"{format_cell(r['source_miou'])},"
                    f"{format_cell(r['target_miou'])}\n")

    from .plots import plot_sweep
    plot_sweep(axis, [r["value"] for r in results],
               [r["source_miou"] for r in results],
               [r["target_miou"] for r in results],
               os.path.join(out_dir, "sweep.png"))
    return results, csv_path
