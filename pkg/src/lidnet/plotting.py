"""Report figures: confusion-matrix heatmap and training curves, written to files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_confusion(matrix, path, title: str = "Confusion matrix") -> None:
    """Heatmap of counts, rows true and columns predicted, each cell annotated."""
    counts = np.asarray(matrix.counts)
    codes = matrix.labels.codes
    n = len(codes)
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 0.42 * n, 1.0 + 0.4 * n))
        im = ax.imshow(counts, cmap="Blues", interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_xticks(range(n), codes, rotation=90)
        ax.set_yticks(range(n), codes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        hi = counts.max(initial=0)
        for i in range(n):
            for j in range(n):
                if counts[i, j]:
                    ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", fontsize=6,
                            color="white" if counts[i, j] > hi / 2 else "black")
        fig.savefig(path)
        plt.close(fig)


def plot_history(history: Sequence, path) -> None:
    steps = [r.step for r in history]
    with plt.rc_context(REPORT_RC):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        ax1.plot(steps, [r.train_loss for r in history], lw=0.8, label="train")
        val = [(r.step, r.val_loss) for r in history if r.val_loss is not None]
        if val:
            ax1.plot(*zip(*val), "o-", ms=3, label="validation")
        ax1.set_ylabel("cross-entropy")
        ax1.legend(frameon=False)
        ax2.plot(steps, [r.lr for r in history], color="C2")
        ax2.set_ylabel("learning rate")
        ax2.set_xlabel("step")
        fig.savefig(path)
        plt.close(fig)
