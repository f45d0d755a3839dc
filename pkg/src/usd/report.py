"""Matplotlib figures written next to the CSV/JSON run outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_trace(trace, path, title=None) -> None:
    """Evaluation MMD^2 per step on a log axis."""
    steps = trace.column("step")
    mmd = np.maximum(trace.mmd2, 1e-300)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(steps, mmd, lw=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("MMD$^2$")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    _save(fig, path)


def _scatter(ax, P, color, label):
    pts = P.points
    w = P.weights / P.weights.max() if P.weights.max() > 0 else P.weights
    y = pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts))
    ax.scatter(pts[:, 0], y, s=2 + 18 * w, c=color, alpha=0.5, lw=0, label=label)


def plot_particles(source, target, final, path) -> None:
    """Scatter of the first two coordinates; marker size follows weight."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    _scatter(axes[0], target, "tab:orange", "target")
    _scatter(axes[0], source, "tab:blue", "source")
    axes[0].set_title("start")
    _scatter(axes[1], target, "tab:orange", "target")
    _scatter(axes[1], final, "tab:green", "final")
    axes[1].set_title("end")
    both = np.vstack([source.points[:, :2], target.points[:, :2], final.points[:, :2]])
    lo, hi = both.min(axis=0), both.max(axis=0)
    pad = 0.05 * (hi - lo).max() + 1e-9
    for ax in axes:
        ax.set_xlim(lo[0] - pad, hi[0] + pad)
        if both.shape[1] > 1:
            ax.set_ylim(lo[1] - pad, hi[1] + pad)
        ax.legend(loc="upper right", fontsize=7, markerscale=2)
    _save(fig, path)


def plot_images(source, target, output, path) -> None:
    """Source, target and recolored images side by side (uint8 HxWx3 arrays)."""
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, img, name in zip(axes, (source, target, output), ("source", "target", "recolored")):
        ax.imshow(img)
        ax.set_title(name)
        ax.axis("off")
    _save(fig, path)


def plot_midpoint(steps, to_source, to_target, best_step, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(steps, to_source, marker="o", ms=3, label="MMD to source")
    ax.plot(steps, to_target, marker="o", ms=3, label="MMD to target")
    ax.axvline(best_step, color="k", ls="--", lw=1, label=f"midpoint (step {best_step})")
    ax.set_xlabel("step")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)
