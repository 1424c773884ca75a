"""Headless matplotlib figures for run metrics and sweep results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_metrics(columns, rows, out_png):
    """Two-panel training curve figure: losses and val mIoU vs step."""
    data = {c: np.array([float(r[i]) for r in rows])
            for i, c in enumerate(columns)}
    steps = data["step"]
    fig, (ax_l, ax_m) = plt.subplots(1, 2, figsize=(10, 4))
    for name in ("l_src", "l_mix", "total"):
        ax_l.plot(steps, data[name], label=name, linewidth=1.2)
    ax_l.set_xlabel("step")
    ax_l.set_ylabel("loss")
    ax_l.legend()
    ax_l.set_title("training losses")
    for name, style in (("source_miou", "-"), ("target_miou", "--")):
        ax_m.plot(steps, data[name], style, label=name, linewidth=1.5)
    ax_m.set_xlabel("step")
    ax_m.set_ylabel("mIoU")
    ax_m.set_ylim(0.0, 1.05)
    ax_m.legend()
    ax_m.set_title("validation mIoU")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def plot_sweep(axis, labels, source_miou, target_miou, out_png):
    """Final val mIoU per swept value; numeric axes get a line plot,
    categorical ones a grouped bar chart."""
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        xs = [float(v) for v in labels]
        numeric = True
    except (TypeError, ValueError):
        xs = np.arange(len(labels))
        numeric = False
    if numeric:
        ax.plot(xs, source_miou, "o-", label="source_miou")
        ax.plot(xs, target_miou, "s--", label="target_miou")
    else:
        width = 0.38
        ax.bar(xs - width / 2, source_miou, width, label="source_miou")
        ax.bar(xs + width / 2, target_miou, width, label="target_miou")
        ax.set_xticks(xs)
        ax.set_xticklabels([str(v) for v in labels], rotation=20)
    ax.set_xlabel(axis)
    ax.set_ylabel("mIoU")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title(f"sweep over {axis}")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
