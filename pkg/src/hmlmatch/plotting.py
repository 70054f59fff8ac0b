"""Figures rendered to files with the non-interactive Agg backend."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so repeated runs write identical bytes
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    from .report import atomic_write
    path = Path(path)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata=_PNG_META)
    plt.close(fig)
    atomic_write(path, buf.getvalue())
    return path


def plot_patch_accuracy(report, path: str | Path) -> Path:
    """One column per level: local (top) and global (bottom) per-patch accuracy grids."""
    levels = sorted({p.level for p in report.patches})
    fig, axes = plt.subplots(2, len(levels), figsize=(2.4 * len(levels), 5), squeeze=False)
    for col, lv in enumerate(levels):
        for row, (name, values) in enumerate((("local", report.local_patch_accuracy),
                                             ("global", report.global_patch_accuracy))):
            ax = axes[row, col]
            im = ax.imshow(report.level_grid(values, lv), vmin=0.0, vmax=1.0, cmap="viridis")
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_title(f"{name}, level {lv}", fontsize=9)
    fig.colorbar(im, ax=axes.ravel().tolist(), shrink=0.8, label="patch accuracy")
    if report.label:
        fig.suptitle(report.label)
    return _save(fig, path)


def plot_bench_summary(result, path: str | Path) -> Path:
    from .bench import METHOD_NAMES
    kinds = list(result.reports)
    names = ["flat vote"] + [METHOD_NAMES.get(k, k) for k in kinds]
    final = [result.baseline_accuracy] + [result.reports[k].accuracy for k in kinds]
    local = [np.nan] + [result.reports[k].mean_local_patch_accuracy for k in kinds]
    glob = [np.nan] + [result.reports[k].mean_global_patch_accuracy for k in kinds]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    ax.bar(x - 0.27, final, 0.27, label="final accuracy")
    ax.bar(x, local, 0.27, label="mean local patch acc.")
    ax.bar(x + 0.27, glob, 0.27, label="mean global patch acc.")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8, loc="upper center", bbox_to_anchor=(0.5, -0.1), ncol=3)
    fig.tight_layout()
    return _save(fig, path)


def plot_cd_diagram(res, path: str | Path) -> Path:
    """Average ranks on a number line with the critical-difference bar."""
    R = res.ranks.average
    order = np.argsort(R, kind="stable")
    k = res.k
    fig, ax = plt.subplots(figsize=(6.5, 1.2 + 0.3 * k))
    ax.set_xlim(k + 0.3, 0.7)
    ax.set_ylim(-k - 1, 1.6)
    ax.hlines(0, 1, k, color="black", lw=1)
    for r in range(1, k + 1):
        ax.vlines(r, -0.1, 0.1, color="black", lw=1)
        ax.text(r, 0.25, str(r), ha="center", fontsize=8)
    ax.hlines(1.2, 1, 1 + res.CD, color="tab:red", lw=2)
    ax.text(1 + res.CD / 2, 1.35, f"CD = {res.CD:.2f}", ha="center", fontsize=8, color="tab:red")
    for n, j in enumerate(order):
        y = -(n + 1) * 0.9
        ax.plot([R[j], R[j]], [0, y], color="gray", lw=0.8)
        ax.text(R[j], y - 0.1, f"{res.methods[j]} ({R[j]:.2f})", ha="center", va="top", fontsize=8)
    ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)
