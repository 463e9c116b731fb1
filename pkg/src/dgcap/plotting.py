"""Report figures written next to the delimited outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def figsize(scale: float = 1.0, ratio: float = 0.618) -> tuple[float, float]:
    width = 5.5 * scale
    return width, width * ratio


def plot_loss_curve(losses: Sequence[tuple[int, int, float]], path: str | Path, title: str = "training loss") -> Path:
    """Per-batch loss (thin) and per-epoch mean (thick) against epoch."""
    path = Path(path)
    epochs: dict[int, list[float]] = {}
    for e, _, v in losses:
        epochs.setdefault(e, []).append(v)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        if losses:
            n = len(losses)
            xs = [e - 1 + (i + 1) / len(epochs[e]) for e, i, _ in losses]
            ax.plot(xs, [v for *_, v in losses], lw=0.5, alpha=0.5, color="C0", label="batch")
            ex = sorted(epochs)
            ax.plot(ex, [sum(epochs[e]) / len(epochs[e]) for e in ex], lw=1.5, color="C1", label="epoch mean")
            if min(v for *_, v in losses) > 0 and n > 1:
                ax.set_yscale("log")
            ax.legend(frameon=False)
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_metrics(metrics: Mapping[str, float], path: str | Path, title: str = "caption metrics") -> Path:
    path = Path(path)
    names = list(metrics)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        bars = ax.bar(names, [metrics[k] for k in names], color=[f"C{i}" for i in range(len(names))])
        for b, k in zip(bars, names):
            ax.annotate(f"{metrics[k]:.3f}", (b.get_x() + b.get_width() / 2, b.get_height()),
                        ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("score")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
