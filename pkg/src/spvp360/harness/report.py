"""Figures written next to a metrics CSV."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS = ("accuracy", "precision", "recall", "nss", "cc", "auc")


def _floats(records, key):
    return np.array([float(r[key]) for r in records], dtype=float)


def plot_metric_series(records: list[dict], path, metrics=METRICS) -> Path:
    """Per-frame metric curves, one line per (N, interval) run."""
    groups = defaultdict(list)
    for r in records:
        groups[(int(r["n_feedback"]), float(r["interval_s"]))].append(r)
    fig, axes = plt.subplots(len(metrics), 1, figsize=(7, 1.8 * len(metrics)), sharex=True)
    for (n, k), rows in sorted(groups.items()):
        x = _floats(rows, "timestamp_s")
        for ax, m in zip(axes, metrics):
            ax.plot(x, _floats(rows, m), lw=1, label=f"N={n}, interval={k:g}s")
    for ax, m in zip(axes, metrics):
        ax.set_ylabel(m)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("time (s)")
    axes[0].legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_summary(means: dict, path, xlabel: str, ylabel: str = "mean accuracy") -> Path:
    """Bar chart of a mean metric against one swept setting."""
    keys = sorted(means)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([str(k) for k in keys], [means[k] for k in keys], color="tab:blue")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_heatmaps(maps: dict[str, np.ndarray], path) -> Path:
    """Side-by-side ERP heatmaps (e.g. saliency, FoV, fused, ground truth)."""
    fig, axes = plt.subplots(1, len(maps), figsize=(3.2 * len(maps), 1.9), squeeze=False)
    for ax, (name, m) in zip(axes[0], maps.items()):
        ax.imshow(m, cmap="magma", vmin=0, vmax=max(1e-12, float(np.max(m))), origin="lower")
        ax.set_title(name, fontsize=8)
        ax.set_axis_off()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_report(records: list[dict], out_dir, stem: str = "metrics") -> list[Path]:
    out_dir = Path(out_dir)
    paths = [plot_metric_series(records, out_dir / f"{stem}_series.png")]
    by_n = defaultdict(list)
    by_k = defaultdict(list)
    for r in records:
        by_n[int(r["n_feedback"])].append(float(r["accuracy"]))
        by_k[float(r["interval_s"])].append(float(r["accuracy"]))
    if len(by_n) > 1:
        paths.append(plot_summary({k: float(np.nanmean(v)) for k, v in by_n.items()},
                                  out_dir / f"{stem}_by_feedback.png", "feedback users N"))
    if len(by_k) > 1:
        paths.append(plot_summary({k: float(np.nanmean(v)) for k, v in by_k.items()},
                                  out_dir / f"{stem}_by_interval.png", "interval (s)"))
    return paths
