"""Matplotlib report figures rendered alongside the raw outputs.

All figures go through Agg with pinned metadata so byte-identical runs
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _to_hwc(grid: np.ndarray) -> np.ndarray:
    img = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return img.transpose(1, 2, 0)


def save_image_grid(cells, row_labels, col_labels, title, path) -> Path:
    """cells: 2-D list of (3,H,W) grids laid out rows x cols."""
    n_rows = len(cells)
    n_cols = len(cells[0])
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(1.6 * n_cols + 1.0, 1.6 * n_rows + 0.8),
                             squeeze=False)
    for r in range(n_rows):
        for c in range(n_cols):
            ax = axes[r][c]
            ax.imshow(_to_hwc(cells[r][c]), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0 and col_labels:
                ax.set_title(col_labels[c], fontsize=8)
            if c == 0 and row_labels:
                ax.set_ylabel(row_labels[r], fontsize=8)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout(rect=(0, 0, 1, 0.96))
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_norm_curves(trace_rows, path, title="subband gradient norms") -> Path:
    """trace_rows: iterable of (step, label, norm, frozen)."""
    series: dict = {}
    for step, label, norm, frozen in trace_rows:
        series.setdefault((label, frozen), []).append((step, norm))
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for (label, frozen), pts in sorted(series.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        style = "--" if frozen else "-"
        ax.plot(xs, ys, style, linewidth=1.0,
                label=f"{label}{' (frozen)' if frozen else ''}")
    ax.set_xlabel("step")
    ax.set_ylabel("gradient L2")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.legend(fontsize=6, ncols=2)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_loss_curve(losses, path, title="fit loss") -> Path:
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.plot(np.arange(1, len(losses) + 1), losses, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("mean L1")
    ax.set_yscale("log")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
