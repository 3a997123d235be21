"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import METRICS_FIELDS, PSNR_CAP, Metrics  # noqa: E402

logger = logging.getLogger(__name__)

_LABELS = {
    "psnr_db": "PSNR [dB]",
    "depth_rmse": "depth RMSE",
    "temporal_delta": "mean |I_t - I_t-1|",
    "coverage": "coverage",
}


def _series(metrics: list[Metrics], key: str):
    x = np.array([m.frame_index for m in metrics])
    y = np.array([getattr(m, key) for m in metrics], dtype=np.float64)
    if key == "psnr_db":
        y = np.minimum(y, PSNR_CAP)
    return x, y


def plot_metrics(metrics: list[Metrics], path) -> Path | None:
    """Per-frame metric curves, one panel per metric that has any finite value."""
    keys = [k for k in METRICS_FIELDS[1:] if np.isfinite(_series(metrics, k)[1]).any()]
    if not keys:
        logger.info("no finite metrics to plot")
        return None
    fig, axes = plt.subplots(len(keys), 1, figsize=(6, 1.8 * len(keys)), sharex=True, squeeze=False)
    for ax, key in zip(axes[:, 0], keys):
        x, y = _series(metrics, key)
        ax.plot(x, y, "o-", ms=3, lw=1)
        ax.set_ylabel(_LABELS[key])
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("frame")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_ablation(results: dict[str, list[Metrics]], path) -> Path | None:
    """Bar chart of frame-averaged metrics per configuration."""
    from .pipeline import summarize

    summary = {name: summarize(m) for name, m in results.items()}
    keys = [k for k in METRICS_FIELDS[1:] if any(np.isfinite(s[k]) for s in summary.values())]
    if not keys:
        return None
    names = list(summary)
    fig, axes = plt.subplots(1, len(keys), figsize=(3.2 * len(keys), 3.2), squeeze=False)
    for ax, key in zip(axes[0], keys):
        vals = [summary[n][key] for n in names]
        ax.bar(range(len(names)), vals, color=["C1" if n == "full" else "C0" for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_title(_LABELS[key], fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
