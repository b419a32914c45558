"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, out_png: str | Path) -> Path:
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_training_curves(epoch_rows, out_png: str | Path) -> Path:
    """Loss curves (speaker, speech, total) with the learning-rate schedule."""
    epochs = [r.epoch for r in epoch_rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r.l_speaker for r in epoch_rows], label="speaker loss")
    if any(r.l_speech != 0.0 for r in epoch_rows):
        ax.plot(epochs, [r.l_speech for r in epoch_rows], label="speech loss")
    ax.plot(epochs, [r.l_total for r in epoch_rows], label="total loss", linestyle="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    twin = ax.twinx()
    twin.plot(epochs, [r.lr for r in epoch_rows], color="grey", alpha=0.5)
    twin.set_ylabel("learning rate", color="grey")
    return _save(fig, out_png)


def plot_score_distribution(raw, labels, out_png: str | Path, normalized=None) -> Path:
    """Histograms of target vs nontarget scores (raw and, if given, normalized)."""
    raw = np.asarray(raw)
    labels = np.asarray(labels, dtype=bool)
    panels = [("raw", raw)] + ([] if normalized is None else [("normalized", np.asarray(normalized))])
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 3.5), squeeze=False)
    for ax, (name, scores) in zip(axes[0], panels):
        ax.hist(scores[labels], bins=30, alpha=0.6, label="target", density=True)
        ax.hist(scores[~labels], bins=30, alpha=0.6, label="nontarget", density=True)
        ax.set_title(f"{name} scores")
        ax.set_xlabel("score")
        ax.legend()
    return _save(fig, out_png)


def plot_ablation(rows, out_png: str | Path, axis_name: str) -> Path:
    """EER (left) and minDCF (right) against the sweep axis, one line per condition."""
    conditions = sorted({r["condition"] for r in rows})
    fig, (ax_eer, ax_dcf) = plt.subplots(1, 2, figsize=(9, 3.5))
    for cond in conditions:
        sub = sorted((r for r in rows if r["condition"] == cond), key=lambda r: r["setting"])
        x = [r["setting"] for r in sub]
        ax_eer.plot(x, [100.0 * r["eer"] for r in sub], marker="o", label=cond)
        ax_dcf.plot(x, [r["min_dcf"] for r in sub], marker="o", label=cond)
    for ax, ylabel in ((ax_eer, "EER (%)"), (ax_dcf, "minDCF")):
        ax.set_xlabel(axis_name)
        ax.set_ylabel(ylabel)
        ax.legend()
    return _save(fig, out_png)
