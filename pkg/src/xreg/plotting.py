"""Report figures. Rendering uses the Agg backend and strips PNG metadata so files are reproducible."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_sweep(rows, path) -> Path:
    """IR / FMR against the inlier distance and RR against the RMSE threshold."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for curve, ax in (("IR", axes[0]), ("FMR", axes[0]), ("RR", axes[1])):
        pts = [(r["threshold"], r["value"]) for r in rows if r["curve"] == curve]
        if pts:
            x, y = np.array(pts).T
            ax.plot(x * 100.0, y, marker=".", label=curve)
    axes[0].set_xlabel("inlier distance [cm]")
    axes[1].set_xlabel("RMSE threshold [cm]")
    for ax in axes:
        ax.set_ylim(0.0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_pairs(records, path) -> Path:
    """Histograms of per-pair inlier ratio and registration RMSE (failures at the right edge)."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    irs = np.array([r["ir"] for r in records], dtype=float)
    axes[0].hist(irs, bins=20, range=(0.0, 1.0), color="tab:blue")
    axes[0].set_xlabel("inlier ratio")
    axes[0].set_ylabel("pairs")
    err = np.array([r["rmse"] for r in records], dtype=float)
    cap = 0.5
    axes[1].hist(np.minimum(np.where(np.isfinite(err), err, cap), cap) * 100.0, bins=25, range=(0.0, cap * 100.0),
                 color="tab:orange")
    axes[1].set_xlabel("RMSE [cm] (clipped)")
    fig.tight_layout()
    return _save(fig, path)


def plot_levels(level_counts, path) -> Path:
    """Bar chart of coarse matches per pyramid level, one group per regime."""
    names = sorted(level_counts)
    k = max((len(v) for v in level_counts.values()), default=0)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.8 / max(len(names), 1)
    for i, name in enumerate(names):
        counts = np.asarray(level_counts[name], dtype=float)
        share = counts / counts.sum() if counts.sum() > 0 else counts
        ax.bar(np.arange(len(counts)) + i * width, share, width, label=name)
    ax.set_xticks(np.arange(k) + 0.4 - width / 2)
    ax.set_xticklabels([f"level {i}" for i in range(k)])
    ax.set_ylabel("share of coarse matches")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_training(records, path) -> Path:
    """Loss curves from training log records."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.array([r["step"] for r in records], dtype=float)
    for key in ("coarse", "fine", "total"):
        vals = np.array([r[key] for r in records], dtype=float)
        if len(vals) >= 20:
            kern = np.ones(20) / 20.0
            ax.plot(steps[19:], np.convolve(vals, kern, mode="valid"), label=key)
        else:
            ax.plot(steps, vals, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss (20-step mean)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
