"""PNG figures written next to the CSV exports (ROC curves, training curves)."""
from __future__ import annotations

from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RocCurve  # noqa: E402
from .trainer import TrainHistory  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_PNG_META = {"Software": None}


def roc_figure(curves: Mapping[str, RocCurve], path, title: str = "ROC") -> None:
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    for name, c in curves.items():
        ax.plot(c.fpr, c.tpr, label=f"{name} (AUC {100 * c.auc:.1f}%)")
    ax.plot([0, 1], [0, 1], color="grey", linestyle=":", linewidth=1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def history_figure(histories: Mapping[str, TrainHistory], path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), dpi=100)
    for name, h in histories.items():
        ep = [e.epoch for e in h.epochs]
        prefix = "" if name == "all" else f"{name} "
        axes[0].plot(ep, [e.train_loss for e in h.epochs], label=f"{prefix}train")
        axes[0].plot(ep, [e.val_loss for e in h.epochs], linestyle="--", label=f"{prefix}val")
        for j, target in enumerate(h.target_names):
            axes[1].plot(ep, [e.val_auc[j] for e in h.epochs], label=target)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("masked BCE")
    axes[0].legend(fontsize="small")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("validation AUC")
    axes[1].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
