"""Report figures rendered to files alongside the delimited outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curation import DistributionTable
from .geometry import ComparisonResult
from .labels import MANIFEST_TAG_ORDER, QualityScore

__all__ = [
    "tag_distribution_chart",
    "chamfer_comparison_chart",
    "training_curves_chart",
]


def tag_distribution_chart(table: DistributionTable, path: Path | str) -> Path:
    """Grouped bar chart of tag yes/no fractions plus score distribution."""
    path = Path(path)
    tags = list(MANIFEST_TAG_ORDER)
    yes = [table.per_tag[t]["yes"] * 100 for t in tags]
    no = [table.per_tag[t]["no"] * 100 for t in tags]
    x = np.arange(len(tags))

    fig, (ax_tags, ax_scores) = plt.subplots(1, 2, figsize=(11, 4), width_ratios=[3, 1])
    width = 0.38
    ax_tags.bar(x - width / 2, no, width, label="0 (No)", color="#7f7f7f")
    ax_tags.bar(x + width / 2, yes, width, label="1 (Yes)", color="#1f77b4")
    for xi, value in zip(x, yes):
        ax_tags.annotate(f"{value:.2f}%", (xi + width / 2, value), ha="center", va="bottom", fontsize=8)
    ax_tags.set_xticks(x)
    ax_tags.set_xticklabels(tags, rotation=20, ha="right", fontsize=8)
    ax_tags.set_ylabel("share of records (%)")
    ax_tags.set_title(f"Binary tag distribution (n={table.n})")
    ax_tags.legend()

    levels = [level.label for level in QualityScore]
    fractions = [table.per_score[level] * 100 for level in QualityScore]
    ax_scores.bar(levels, fractions, color="#2ca02c")
    ax_scores.set_ylabel("share of records (%)")
    ax_scores.set_title("Score distribution")
    ax_scores.tick_params(axis="x", rotation=30)

    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def chamfer_comparison_chart(result: ComparisonResult, path: Path | str) -> Path:
    """Per-object paired bars of both candidates' chamfer distances."""
    path = Path(path)
    names = [row.object_name for row in result.rows]
    x = np.arange(len(names))
    width = 0.38

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(names)), 4))
    ax.bar(x - width / 2, [row.chamfer_a for row in result.rows], width, label="model A", color="#1f77b4")
    ax.bar(x + width / 2, [row.chamfer_b for row in result.rows], width, label="model B", color="#ff7f0e")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("chamfer distance")
    ax.set_title(
        f"Chamfer distance per object (A wins {result.a_wins}, B wins {result.b_wins}, ties {result.ties})"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def training_curves_chart(history: Sequence, path: Path | str) -> Path:
    """Train/validation loss per epoch for a training run."""
    path = Path(path)
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h.train_loss for h in history], marker="o", label="train loss")
    ax.plot(epochs, [h.val_loss for h in history], marker="s", label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Annotator training")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path
