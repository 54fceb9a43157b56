"""Report figures rendered next to the delimited text output.

All rendering uses the Agg backend so the CLI works headless.  Figures are
a convenience view of the same numbers the text reports carry; the text
remains the authoritative format.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CVReport
from .subspaces import RelevanceReport

__all__ = ["save_cv_figures", "save_relevance_figure"]

_METRICS = ("accuracy", "sensitivity", "specificity", "auc")


def save_cv_figures(report: CVReport, report_path: Path | str) -> list[Path]:
    """Render per-fold metrics and mixing weights beside the text report.

    Returns the written paths: ``<report>.metrics.png`` and
    ``<report>.weights.png``.
    """
    base = Path(report_path)
    written = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    folds = np.arange(report.n_folds)
    width = 0.2
    for i, name in enumerate(_METRICS):
        ax.bar(folds + (i - 1.5) * width, report.metric(name), width, label=name)
    ax.set_xlabel("fold")
    ax.set_ylabel("rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(folds)
    ax.legend(loc="lower right", ncol=4, fontsize=8)
    ax.set_title(
        f"{report.kernel_kind}/{report.layout_tag}: "
        f"mean accuracy {report.mean('accuracy'):.3f}"
    )
    fig.tight_layout()
    path = base.with_name(base.name + ".metrics.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    w = report.weights
    finite = np.nan_to_num(w, nan=0.0)
    im = ax.imshow(finite, aspect="auto", interpolation="nearest", cmap="viridis")
    ax.set_xlabel("bag")
    ax.set_ylabel("fold")
    ax.set_title("learned mixing weights per fold")
    fig.colorbar(im, ax=ax, label="weight")
    fig.tight_layout()
    path = base.with_name(base.name + ".weights.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def save_relevance_figure(report: RelevanceReport, path: Path | str) -> Path:
    """Bar chart of accumulated relevance scores, highlighting the ranking."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4))
    bags = np.arange(report.scores.size)
    colors = np.full(report.scores.size, "#777777", dtype=object)
    for i in report.ranking[: min(5, report.scores.size)]:
        colors[i] = "#cc3311"
    ax.bar(bags, report.scores, color=list(colors))
    ax.set_xlabel("bag")
    ax.set_ylabel(f"relevance score (0..{report.n_folds})")
    ax.set_title("subspace relevance, top five highlighted")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
