"""Synthetic two-domain segmentation benchmark.

Each sample is a Voronoi partition of the image into class regions,
painted with a per-domain palette, modulated by per-class diagonal
texture waves, and optionally corrupted by a global high-frequency
additive artifact. Region boundaries are quantized to REGION_BLOCK
pixel blocks so that a patch-aligned decoder can in principle reach
perfect overlap; the interesting gap between domains lives in
appearance, not geometry.

Domains sharing a shape_seed draw identical region layouts for a given
sample seed, so paired-domain datasets differ only in rendering.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .ppm import read_pgm, read_ppm, write_pgm, write_ppm

REGION_BLOCK = 4
TEXTURE_AMP = 0.08


@dataclass(frozen=True)
class Artifact:
    """Additive diagonal cosine wave applied to every channel.

    flip_block > 0 multiplies the wave by a random per-sample sign held
    constant over flip_block-pixel blocks. The flips kill the wave's
    image-wide mean and fixed phase, so nothing about the artifact can
    be read off from global statistics; it stays a purely local,
    high-frequency perturbation.
    """

    enabled: bool = False
    period: int = 2
    amplitude: float = 0.0
    flip_block: int = 0

    def __post_init__(self):
        if self.period < 2:
            raise ValueError(f"artifact period must be >= 2, got {self.period}")
        if self.amplitude < 0:
            raise ValueError("artifact amplitude must be non-negative")
        if self.flip_block < 0:
            raise ValueError("artifact flip_block must be non-negative")


@dataclass(frozen=True)
class DomainSpec:
    """Rendering recipe for one domain.

    palette: (K,3) base color per class.
    texture_freq: per-class integer wave count across the image
        diagonal; 0 disables texture for that class.
    """

    palette: tuple
    texture_freq: tuple
    noise_sigma: float = 0.0
    artifact: Artifact = field(default_factory=Artifact)
    shape_seed: int = 0

    def __post_init__(self):
        if len(self.palette) < 2:
            raise ValueError("need at least 2 classes")
        if len(self.texture_freq) != len(self.palette):
            raise ValueError("texture_freq must match palette length")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def class_count(self):
        return len(self.palette)


@dataclass
class Sample:
    image: np.ndarray  # (3,S,S) float64 in [0,1]
    label: np.ndarray  # (S,S) int64 in [0,K)


def inject_artifact(img, period, amplitude, envelope=None):
    """Add amplitude*cos(2*pi*(h+w)/period) to every channel, clipped to [0,1].

    At period 2 the wave alternates sign on the pixel checkerboard, the
    highest frequency the grid can carry. An optional (H,W) envelope is
    multiplied into the wave before it is added.
    """
    img = np.asarray(img, dtype=np.float64)
    h = np.arange(img.shape[1])[:, None]
    w = np.arange(img.shape[2])[None, :]
    wave = amplitude * np.cos(2.0 * np.pi * (h + w) / period)
    if envelope is not None:
        envelope = np.asarray(envelope, dtype=np.float64)
        if envelope.shape != wave.shape:
            raise ValueError(
                f"envelope shape {envelope.shape} != image plane {wave.shape}")
        wave = wave * envelope
    return np.clip(img + wave[None, :, :], 0.0, 1.0)


def _block_voronoi(rng, size, k):
    """Voronoi labels on the REGION_BLOCK grid, upsampled to pixels."""
    b = size // REGION_BLOCK
    flat = rng.choice(b * b, size=k, replace=False)
    sites = np.stack([flat // b, flat % b], axis=1).astype(np.float64)
    bi = np.arange(b, dtype=np.float64)
    cells = np.stack(np.meshgrid(bi, bi, indexing="ij"), axis=-1)  # (b,b,2)
    d2 = ((cells[:, :, None, :] - sites[None, None, :, :]) ** 2).sum(axis=-1)
    block_label = np.argmin(d2, axis=-1)  # ties go to the lowest class
    return np.repeat(np.repeat(block_label, REGION_BLOCK, 0), REGION_BLOCK, 1)


def generate_sample(spec, seed, size=32):
    """Render one sample deterministically from (spec, seed)."""
    if size % REGION_BLOCK != 0:
        raise ValueError(f"size must be a multiple of {REGION_BLOCK}")
    k = spec.class_count
    rng = np.random.default_rng([spec.shape_seed, seed])
    label = _block_voronoi(rng, size, k)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=k)

    palette = np.asarray(spec.palette, dtype=np.float64)
    img = palette[label].transpose(2, 0, 1).copy()

    h = np.arange(size)[:, None]
    w = np.arange(size)[None, :]
    diag = (h + w).astype(np.float64)
    for c in range(k):
        freq = spec.texture_freq[c]
        if freq == 0:
            continue
        wave = TEXTURE_AMP * np.sin(2.0 * np.pi * freq * diag / size + phases[c])
        img[:, label == c] += wave[label == c]

    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    art = spec.artifact
    if art.enabled:
        envelope = None
        if art.flip_block > 0:
            if size % art.flip_block != 0:
                raise ValueError(
                    f"size must be a multiple of flip_block {art.flip_block}")
            b = art.flip_block
            signs = rng.choice([-1.0, 1.0], size=(size // b, size // b))
            envelope = np.repeat(np.repeat(signs, b, 0), b, 1)
        img = inject_artifact(img, art.period, art.amplitude, envelope)
    return Sample(image=img, label=label)


def _flatten(maps):
    if isinstance(maps, (list, tuple)):
        parts = [np.asarray(m).ravel() for m in maps]
        return np.concatenate(parts) if parts else np.array([], dtype=np.int64)
    return np.asarray(maps).ravel()


def confusion(preds, labels, k):
    """(K,K) counts, rows ground truth, cols prediction. Accepts single
    maps or lists of maps."""
    preds = _flatten(preds)
    labels = _flatten(labels)
    if preds.size == 0 or preds.size != labels.size:
        raise ValueError("need matching, non-empty prediction and label sets")
    idx = labels * k + preds
    return np.bincount(idx, minlength=k * k).reshape(k, k)


def evaluate(preds, labels, k):
    """Per-class IoU and mIoU. Classes absent from both sides score NaN
    and are excluded from the mean."""
    cm = confusion(preds, labels, k)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    iou = np.full(k, np.nan)
    present = union > 0
    iou[present] = inter[present] / union[present]
    if not present.any():
        raise ValueError("no class present in either predictions or labels")
    return iou, float(np.nanmean(iou))


# da-analog palettes sit close together (0.14 between neighboring class
# centers) under sigma-0.16 noise, so the segmentation task stays hard
# enough that source training keeps improving for thousands of steps;
# self-training then has genuine supervised signal to propagate instead
# of only echoing its own predictions. The target palette is the source
# palette brightened by 0.01 on every channel: a real but mild shift,
# small next to the checkerboard artifact that carries most of the
# domain gap.
_DA_SOURCE_PALETTE = (
    (0.52, 0.57, 0.48),
    (0.52, 0.43, 0.62),
    (0.38, 0.57, 0.62),
    (0.38, 0.43, 0.48),
)
_DA_TARGET_PALETTE = tuple(
    tuple(round(v + 0.01, 3) for v in row) for row in _DA_SOURCE_PALETTE
)

_DG_BASE_PALETTE = (
    (0.20, 0.30, 0.75),
    (0.75, 0.30, 0.20),
    (0.20, 0.65, 0.30),
    (0.70, 0.65, 0.20),
)
_DG_TARGET_PALETTE = (
    (0.32, 0.42, 0.60),
    (0.62, 0.44, 0.33),
    (0.33, 0.52, 0.44),
    (0.58, 0.55, 0.35),
)


def benchmark_specs(name, shape_seed=1234):
    """Source/target DomainSpec pair for a named benchmark.

    da-analog: a hard fine-grained color task; the target brightens the
        palette slightly and adds a sign-scrambled checkerboard artifact,
        which is what a frozen source model trips over.
    dg-analog: easier task with a milder palette and texture shift and
        no artifact, for source-only generalization runs.
    """
    if name == "da-analog":
        source = DomainSpec(
            palette=_DA_SOURCE_PALETTE,
            texture_freq=(0, 3, 6, 9),
            noise_sigma=0.16,
            shape_seed=shape_seed,
        )
        target = DomainSpec(
            palette=_DA_TARGET_PALETTE,
            texture_freq=(0, 3, 6, 9),
            noise_sigma=0.16,
            artifact=Artifact(enabled=True, period=2, amplitude=0.22,
                              flip_block=4),
            shape_seed=shape_seed,
        )
    elif name == "dg-analog":
        source = DomainSpec(
            palette=_DG_BASE_PALETTE,
            texture_freq=(0, 2, 3, 5),
            noise_sigma=0.02,
            shape_seed=shape_seed,
        )
        target = DomainSpec(
            palette=_DG_TARGET_PALETTE,
            texture_freq=(3, 5, 2, 7),
            noise_sigma=0.04,
            shape_seed=shape_seed,
        )
    else:
        raise ValueError(f"unknown benchmark {name!r}")
    return source, target


def make_benchmark(name, out_dir, master_seed=0, train_count=200, val_count=50,
                   size=32):
    """Write the full benchmark tree and its manifest; returns out_dir.

    Layout: <out>/<domain>/<split>/img_NNNN.{ppm,pgm} plus manifest.csv
    with columns path,split,domain,seed. Sample seeds are consecutive
    integers starting at master_seed, disjoint across all four splits,
    so the whole tree regenerates bit-identically.
    """
    source, target = benchmark_specs(name)
    rows = []
    seed = master_seed
    for domain, spec in (("source", source), ("target", target)):
        for split, count in (("train", train_count), ("val", val_count)):
            d = os.path.join(out_dir, domain, split)
            os.makedirs(d, exist_ok=True)
            for i in range(count):
                sample = generate_sample(spec, seed, size=size)
                rel = f"{domain}/{split}/img_{i:04d}.ppm"
                write_ppm(os.path.join(out_dir, rel), sample.image)
                write_pgm(os.path.join(out_dir, rel[:-4] + ".pgm"), sample.label)
                rows.append((rel, split, domain, seed))
                seed += 1
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "split", "domain", "seed"])
        writer.writerows(rows)
    with open(os.path.join(out_dir, "benchmark.txt"), "w") as f:
        f.write(f"{name} {size} {source.class_count}\n")
    return out_dir


@dataclass
class Benchmark:
    name: str
    size: int
    class_count: int
    source_train: list
    source_val: list
    target_train: list  # images only; labels withheld from training code
    target_val: list


def load_benchmark(bench_dir):
    """Load a generated benchmark. Target train labels are not loaded;
    use load_target_train_labels for audits only."""
    name, size, k = _read_benchmark_header(bench_dir)
    splits = {("source", "train"): [], ("source", "val"): [],
              ("target", "train"): [], ("target", "val"): []}
    for rel, split, domain, _seed in _read_manifest(bench_dir):
        img = read_ppm(os.path.join(bench_dir, rel))
        if domain == "target" and split == "train":
            splits[(domain, split)].append(img)
        else:
            label = read_pgm(os.path.join(bench_dir, rel[:-4] + ".pgm"))
            splits[(domain, split)].append(Sample(image=img, label=label))
    return Benchmark(
        name=name, size=size, class_count=k,
        source_train=splits[("source", "train")],
        source_val=splits[("source", "val")],
        target_train=splits[("target", "train")],
        target_val=splits[("target", "val")],
    )


def load_target_train_labels(bench_dir):
    """Audit hook: the withheld target-train labels, in manifest order."""
    return [read_pgm(os.path.join(bench_dir, rel[:-4] + ".pgm"))
            for rel, split, domain, _ in _read_manifest(bench_dir)
            if domain == "target" and split == "train"]


def _read_manifest(bench_dir):
    with open(os.path.join(bench_dir, "manifest.csv"), newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["path", "split", "domain", "seed"]:
            raise ValueError(f"unexpected manifest header {header}")
        return [(p, s, d, int(seed)) for p, s, d, seed in reader]


def _read_benchmark_header(bench_dir):
    with open(os.path.join(bench_dir, "benchmark.txt")) as f:
        name, size, k = f.read().split()
    return name, int(size), int(k)
