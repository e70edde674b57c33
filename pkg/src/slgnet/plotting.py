"""Matplotlib figures written next to JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PathLike = Union[str, Path]


def figure_path(report_path: PathLike, suffix: str) -> Path:
    p = Path(report_path)
    return p.with_name(f"{p.stem}_{suffix}.png")


def plot_history(history: List[dict], out: PathLike, title: str = "") -> Path:
    """Loss and token AP per epoch for one training run."""
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_ap) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r["val_loss"] for r in history], marker="o", label="val")
    train_pts = [(r["epoch"], r["train_loss"]) for r in history if np.isfinite(r["train_loss"])]
    if train_pts:
        ax_loss.plot(*zip(*train_pts), marker=".", label="train")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("BCE")
    ax_loss.legend()
    ax_ap.plot(epochs, [r["token_ap"] for r in history], marker="o", color="tab:green")
    ax_ap.set_xlabel("epoch")
    ax_ap.set_ylabel("token AP")
    ax_ap.set_ylim(0, 1.02)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


def plot_ablation_table(table: Dict[str, Dict[str, dict]], out: PathLike) -> Path:
    """Grouped bars: component rows x caption policies, with std error bars."""
    rows = list(table)
    policies = list(next(iter(table.values())))
    x = np.arange(len(rows))
    width = 0.8 / len(policies)
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for i, pol in enumerate(policies):
        means = [table[r][pol]["mean"] for r in rows]
        stds = [table[r][pol]["std"] for r in rows]
        ax.bar(x + (i - (len(policies) - 1) / 2) * width, means, width, yerr=stds, capsize=3, label=pol)
    ax.set_xticks(x)
    ax.set_xticklabels(rows)
    ax.set_ylabel("token AP (mean ± std over seeds)")
    lo = min(table[r][p]["mean"] - table[r][p]["std"] for r in rows for p in policies)
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


def plot_tuning_curves(tuning: Dict[str, dict], out: PathLike, mark_epoch: int = 5) -> Path:
    """Validation loss per epoch for every seed, adapter vs full tuning."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    colors = {"adapter": "tab:blue", "full": "tab:red"}
    for mode, info in tuning.items():
        for k, hist in enumerate(info["history"]):
            ax.plot(
                [r["epoch"] for r in hist],
                [r["val_loss"] for r in hist],
                color=colors.get(mode),
                alpha=0.8,
                label=mode if k == 0 else None,
            )
    ax.axvline(mark_epoch, color="gray", linestyle=":")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation BCE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


def plot_structure_maps(maps: Dict[str, Sequence[np.ndarray]], out: PathLike) -> Path:
    """One row per map kind, one column per pyramid level."""
    kinds = list(maps)
    n_levels = len(next(iter(maps.values())))
    fig, axes = plt.subplots(len(kinds), n_levels, figsize=(2.2 * n_levels, 2.0 * len(kinds)), squeeze=False)
    for i, kind in enumerate(kinds):
        for l in range(n_levels):
            ax = axes[i][l]
            ax.imshow(maps[kind][l], cmap="gray")
            ax.set_xticks([])
            ax.set_yticks([])
            if l == 0:
                ax.set_ylabel(kind, fontsize=8)
            if i == 0:
                ax.set_title(f"level {l + 1}", fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)
