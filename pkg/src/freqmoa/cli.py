"""Command line entry points.

Exit codes: 0 on success, 2 for configuration problems (including bad
flags), 3 for numeric failures during a run. The EA_THREADS environment
variable sets the sweep worker count.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from .config import load_config, replace_fields
from .data import make_benchmark
from .errors import ConfigError, NumericError
from .ppm import read_ppm, write_ppm, write_raw_grid
from .runner import (SWEEP_AXES, evaluate_checkpoint, model_from_checkpoint,
                     run_experiment, run_sweep)
from .spectral import split_frequency


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(3)
    return wrapper


@click.group()
def main():
    """Frequency-split adapter tuning on a synthetic two-domain
    segmentation benchmark."""


def _run_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="YAML run config.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override train.seed.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Override out.dir.")(fn)
    fn = click.option("--resume", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="Continue from a checkpoint.")(fn)
    return fn


def _prepare(config_path, mode, seed, out):
    cfg = load_config(config_path)
    overrides = {}
    if cfg.mode != mode:
        overrides["mode"] = mode
    if seed is not None:
        overrides["train.seed"] = seed
    if out is not None:
        overrides["out.dir"] = out
    return replace_fields(cfg, overrides) if overrides else cfg


def _echo_summary(summary):
    click.echo(f"final source_miou={summary['source_miou']:.4f} "
               f"target_miou={summary['target_miou']:.4f} "
               f"steps={summary['steps']} mode={summary['mode']}")


@main.command("gen-data")
@click.option("--name", type=click.Choice(["da-analog", "dg-analog"]),
              default="da-analog", show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-count", type=int, default=200, show_default=True)
@click.option("--val-count", type=int, default=50, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@guarded
def gen_data(name, out, seed, train_count, val_count, size):
    """Generate the two-domain benchmark tree and its manifest."""
    if train_count < 1 or val_count < 1:
        raise ConfigError("train/val counts must be positive")
    try:
        make_benchmark(name, out, master_seed=seed, train_count=train_count,
                       val_count=val_count, size=size)
    except ValueError as exc:
        raise ConfigError(str(exc))
    total = 2 * (train_count + val_count)
    click.echo(f"wrote {total} samples to {out}")


@main.command("pretrain")
@_run_options
@guarded
def pretrain(config_path, seed, out, resume):
    """Train backbone and decoder jointly on the source domain."""
    cfg = _prepare(config_path, "pretrain", seed, out)
    _echo_summary(run_experiment(cfg, resume=resume))


@main.command("train-dg")
@_run_options
@guarded
def train_dg(config_path, seed, out, resume):
    """Source-only tuning of adapters and decoder over a frozen backbone."""
    cfg = _prepare(config_path, "dg", seed, out)
    _echo_summary(run_experiment(cfg, resume=resume))


@main.command("train-da")
@_run_options
@guarded
def train_da(config_path, seed, out, resume):
    """Self-training adaptation with a moving-average teacher."""
    cfg = _prepare(config_path, "da", seed, out)
    _echo_summary(run_experiment(cfg, resume=resume))


@main.command("eval")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--benchmark", type=click.Path(exists=True, file_okay=False),
              default=None, help="Override the benchmark recorded in the "
              "checkpoint.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Also write eval.csv here.")
@guarded
def eval_cmd(checkpoint, benchmark, out):
    """Score a checkpoint on both validation splits."""
    summary = evaluate_checkpoint(checkpoint, benchmark)
    _echo_summary(summary)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "eval.csv")
        k = len(summary["source_iou"])
        with open(path, "w") as f:
            f.write("metric," + ",".join(f"class_{i}" for i in range(k))
                    + ",mean\n")
            f.write("source_iou,"
                    + ",".join("%.17g" % v for v in summary["source_iou"])
                    + ",%.17g\n" % summary["source_miou"])
            f.write("target_iou,"
                    + ",".join("%.17g" % v for v in summary["target_iou"])
                    + ",%.17g\n" % summary["target_miou"])
        click.echo(f"wrote {path}")


@main.command("sweep")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", required=True, type=click.Choice(list(SWEEP_AXES)))
@click.option("--values", required=True,
              help="Comma-separated values; freq_layers accepts presets "
              "first-3/last-3/last-6/all or colon-joined indices like 5:6:7.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@guarded
def sweep(config_path, axis, values, out, seed):
    """Train once per value of one adapter field and tabulate val mIoU."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace_fields(cfg, {"train.seed": seed})
    workers_raw = os.environ.get("EA_THREADS", "1")
    try:
        workers = int(workers_raw)
    except ValueError:
        raise ConfigError(f"EA_THREADS must be an integer, got {workers_raw!r}")
    if workers < 1:
        raise ConfigError(f"EA_THREADS must be >= 1, got {workers}")
    tokens = [t for t in values.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("sweep needs at least one value")
    try:
        results, csv_path = run_sweep(cfg, axis, tokens, out, workers=workers)
    except ValueError as exc:
        raise ConfigError(str(exc))
    for r in results:
        click.echo(f"{axis}={r['value']}: status={r['status'].split(':')[0]} "
                   f"source_miou={r['source_miou']:.4f} "
                   f"target_miou={r['target_miou']:.4f}")
    click.echo(f"wrote {csv_path}")


@main.command("pca-export")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--benchmark", type=click.Path(exists=True, file_okay=False),
              default=None)
@click.option("--domain", type=click.Choice(["source", "target"]),
              default="target", show_default=True)
@click.option("--split", type=click.Choice(["train", "val"]), default="val",
              show_default=True)
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--layer", type=int, default=None,
              help="Adapted layer to inspect; defaults to the last "
              "frequency-adapted layer.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@guarded
def pca_export(checkpoint, benchmark, domain, split, index, layer, out):
    """Render top-3 principal components of one layer's adapter deltas."""
    from .pca import export_pca

    model, cfg, bench, _ = model_from_checkpoint(checkpoint, benchmark)
    if model.moa is None:
        raise ConfigError("checkpoint has no adapter stack to inspect")
    if layer is None:
        freq = model.moa.freq_layers
        adapted = [i for i, l in enumerate(model.moa.layers) if l is not None]
        layer = freq[-1] if freq else adapted[-1]
    pool = {("source", "train"): bench.source_train,
            ("source", "val"): bench.source_val,
            ("target", "train"): bench.target_train,
            ("target", "val"): bench.target_val}[(domain, split)]
    if not 0 <= index < len(pool):
        raise ConfigError(f"index {index} outside {domain}/{split} "
                          f"(size {len(pool)})")
    entry = pool[index]
    image = entry if isinstance(entry, np.ndarray) else entry.image
    written = export_pca(model, image, layer, out)
    for path in written:
        click.echo(f"wrote {path}")


@main.command("split-freq")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--rho", type=float, default=0.3, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@guarded
def split_freq(image, rho, out):
    """Split an image into its low/high spectral parts.

    Writes viewable PPMs (the high band offset by +0.5 so sign survives
    byte quantization) plus lossless float64 grids of both bands.
    """
    img = read_ppm(image)
    try:
        low, high = split_frequency(img, rho)
    except ValueError as exc:
        raise ConfigError(str(exc))
    os.makedirs(out, exist_ok=True)
    write_ppm(os.path.join(out, "low.ppm"), np.clip(low, 0.0, 1.0))
    write_ppm(os.path.join(out, "high.ppm"), np.clip(high + 0.5, 0.0, 1.0))
    write_raw_grid(os.path.join(out, "low.f64"), low)
    write_raw_grid(os.path.join(out, "high.f64"), high)
    for name in ("low.ppm", "high.ppm", "low.f64", "high.f64"):
        click.echo(f"wrote {os.path.join(out, name)}")


if __name__ == "__main__":
    main()
