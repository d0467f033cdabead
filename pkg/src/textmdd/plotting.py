"""Report figures written next to the JSON reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "svg.hashsalt": "textmdd",
}
# fixed metadata so repeated runs write identical files
_META = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata=_META.get(path.suffix.lstrip("."), None))
    plt.close(fig)
    return path


def plot_training_curves(history: list, path, title: str = "") -> Path:
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(epochs, [h["train_loss"] for h in history], "o-", ms=3, color="C0", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss", color="C0")
        per = [h["dev_per"] for h in history]
        if any(p is not None for p in per):
            ax2 = ax.twinx()
            ax2.plot(epochs, per, "s--", ms=3, color="C3", label="dev PER")
            ax2.set_ylabel("dev PER", color="C3")
            ax2.grid(False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_per_f1(rows: list, path) -> Path:
    """Side-by-side PER and F1 bars, one group per configuration."""
    labels = [r["label"] for r in rows]
    per = [100 * r["evaluation"]["per"] for r in rows]
    f1 = [100 * r["evaluation"]["rates"]["f1"] for r in rows]
    x = range(len(rows))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(rows)), 3))
        ax.bar([i - 0.2 for i in x], per, width=0.4, label="PER (%)")
        ax.bar([i + 0.2 for i in x], f1, width=0.4, label="F1 (%)")
        for i, (p, f) in enumerate(zip(per, f1)):
            ax.annotate(f"{p:.1f}", (i - 0.2, p), ha="center", va="bottom", fontsize=7)
            ax.annotate(f"{f:.1f}", (i + 0.2, f), ha="center", va="bottom", fontsize=7)
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel("%")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_attention(alpha, canonical_symbols, path, title: str = "") -> Path:
    """Frame-by-phone attention weights of one utterance."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        im = ax.imshow(alpha.T, aspect="auto", origin="lower", cmap="viridis", interpolation="nearest")
        ax.set_yticks(range(len(canonical_symbols)))
        ax.set_yticklabels(canonical_symbols)
        ax.set_xlabel("frame")
        ax.set_ylabel("canonical phone")
        ax.grid(False)
        fig.colorbar(im, ax=ax, fraction=0.05)
        if title:
            ax.set_title(title)
        return _save(fig, path)
