"""Figure rendering for evaluation reports and parameter sweeps.

Every report-producing CLI path writes a PNG next to its CSV so runs are
inspectable at a glance.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_sweep_plot(
    rows: Sequence[tuple[float, float]],
    xlabel: str,
    ylabel: str,
    title: str,
    path,
    highlight_max: bool = False,
) -> None:
    """Line plot of a parameter sweep (one (x, score) pair per row)."""
    xs = [x for x, _ in rows]
    ys = [y for _, y in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o", lw=1.5)
    if highlight_max and rows:
        best = max(rows, key=lambda r: r[1])
        ax.plot([best[0]], [best[1]], marker="*", ms=14, color="crimson", zorder=3)
        ax.annotate(
            f"best {best[1]:.4f} @ {best[0]:g}",
            xy=best,
            xytext=(5, -12),
            textcoords="offset points",
            fontsize=9,
        )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(
    per_query: Sequence[tuple[str, float]], title: str, path
) -> None:
    """Histogram of per-query scores from an evaluation report."""
    scores = [s for _, s in per_query]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(scores, bins=20, color="steelblue", edgecolor="white")
    ax.set_xlabel("per-query score")
    ax.set_ylabel("queries")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
