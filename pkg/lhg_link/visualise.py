from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGURE_SIZE = (8, 5)
DPI = 100


def plot_loss_curve(report, dst_path: Path) -> Path:
    """Mean training loss and validation MAP per epoch, side by side."""
    epochs = list(range(1, len(report.losses) + 1))
    fig, (ax_loss, ax_map) = plt.subplots(1, 2, figsize=FIGURE_SIZE)
    ax_loss.plot(epochs, report.losses, marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("Training loss")
    ax_map.plot(epochs, report.val_map, marker="o", color="tab:orange")
    ax_map.set_xlabel("epoch")
    ax_map.set_ylabel("MAP")
    ax_map.set_title("Validation MAP")
    if report.convergence_epoch:
        ax_map.axvline(report.convergence_epoch, linestyle="--", color="grey")
    fig.suptitle(f"{report.dataset} / {report.variant} / seed {report.seed}")
    fig.tight_layout()
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(str(dst_path), dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return dst_path


def plot_metric_bars(reports: Sequence[Dict], dst_path: Path, label_key: str = "variant") -> Path:
    labels = [str(r[label_key]) for r in reports]
    x = range(len(reports))
    width = 0.4
    fig, ax = plt.subplots(figsize=FIGURE_SIZE)
    ax.bar([i - width / 2 for i in x], [r["map"] for r in reports], width, label="MAP")
    ax.bar([i + width / 2 for i in x], [r["ndcg"] for r in reports], width, label="NDCG")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(str(dst_path), dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return dst_path
