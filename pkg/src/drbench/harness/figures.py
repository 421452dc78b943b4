"""Figure rendering. PNGs are written without timestamp or software metadata
so reruns produce identical bytes."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..data.types import LESIONS, NUM_GRADES  # noqa: E402

PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=80, metadata=PNG_META)
    plt.close(fig)
    return path


def row_percentages(cm, decimals: int = 1) -> np.ndarray:
    """Row-normalised percentages rounded so every non-empty row sums to
    exactly 100 at the given precision (largest-remainder rounding)."""
    cm = np.asarray(cm, dtype=np.int64)
    units = 100 * 10**decimals
    out = np.zeros(cm.shape, dtype=np.int64)
    for i, row in enumerate(cm):
        total = int(row.sum())
        if total == 0:
            continue
        exact = row * units
        base = exact // total
        short = units - int(base.sum())
        # hand the missing units to the largest remainders, lowest index on ties
        order = np.lexsort((np.arange(len(row)), -(exact % total)))
        base[order[:short]] += 1
        out[i] = base
    return out / 10**decimals


def confusion_heatmap(cm, path, title: str = "") -> np.ndarray:
    pct = row_percentages(cm)
    k = pct.shape[0]
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    ax.imshow(pct, cmap="Blues", vmin=0, vmax=100)
    for i in range(k):
        for j in range(k):
            ax.text(j, i, f"{pct[i, j]:.1f}", ha="center", va="center", fontsize=7,
                    color="white" if pct[i, j] > 50 else "black")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xlabel("predicted grade")
    ax.set_ylabel("true grade")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
    return pct


def pr_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], path, title: str = "") -> Path:
    """``curves`` maps a label to (recall, precision)."""
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    for label, (recall, precision) in curves.items():
        ax.step(recall, precision, where="post", label=label, linewidth=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=6, loc="lower left")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def ladder_chart(rows: list[tuple[str, dict[str, float]]], path, metrics=("kappa", "f1", "auc_roc")) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    width = 0.8 / max(len(rows), 1)
    x = np.arange(len(metrics))
    for i, (name, values) in enumerate(rows):
        ax.bar(x + i * width, [values.get(m, np.nan) for m in metrics], width, label=name)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def statistics_chart(stats, path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    axes[0].bar(list(stats.images_per_lesion), list(stats.images_per_lesion.values()))
    axes[0].set_title("images per lesion", fontsize=9)
    axes[1].bar([str(g) for g in stats.grade_distribution], list(stats.grade_distribution.values()))
    axes[1].set_title("grade distribution", fontsize=9)
    table = np.array([[stats.lesions_per_grade_normalized[(g, k)] for k in LESIONS] for g in range(NUM_GRADES)])
    axes[2].imshow(table, cmap="Oranges", vmin=0, vmax=1)
    axes[2].set_xticks(range(len(LESIONS)))
    axes[2].set_xticklabels(LESIONS, fontsize=7)
    axes[2].set_yticks(range(NUM_GRADES))
    axes[2].set_title("lesion share per grade", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def map_overlay(image: np.ndarray, heat: np.ndarray, path, title: str = "") -> Path:
    """Input image next to a [0, 1] heat map blended over it."""
    fig, axes = plt.subplots(1, 2, figsize=(5, 2.6))
    axes[0].imshow(np.clip(image, 0, 1))
    axes[1].imshow(np.clip(image, 0, 1))
    axes[1].imshow(heat, cmap="jet", alpha=0.5, vmin=0, vmax=1)
    for ax in axes:
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
