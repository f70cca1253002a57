"""Report figures rendered next to the delimited outputs.

Training runs get a loss/lr curve figure from their metrics log, evaluation
gets a confusion-matrix figure, and the attribution command gets heatmap
overlays and side-by-side layer sweeps.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(metrics_rows: list[dict], path: str | Path) -> Path:
    """Loss curves (total + enabled terms) with the lr schedule on a twin axis."""
    path = Path(path)
    epochs = [row["epoch"] for row in metrics_rows]
    fig, ax = plt.subplots(figsize=(7, 4.4))
    for key, style in (("loss_total", "-"), ("loss_barlow", "--"), ("loss_order", ":")):
        if metrics_rows and key in metrics_rows[0]:
            ax.plot(epochs, [row[key] for row in metrics_rows], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(epochs, [row["lr"] for row in metrics_rows], color="tab:gray", alpha=0.5)
    ax2.set_ylabel("lr", color="tab:gray")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_confusion_matrix(
    confusion: np.ndarray, class_names: list[str], path: str | Path
) -> Path:
    path = Path(path)
    cm = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(class_names)), class_names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    thresh = cm.max() / 2 if cm.max() else 0.5
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(
                j, i, str(cm[i, j]), ha="center", va="center", fontsize=8,
                color="white" if cm[i, j] > thresh else "black",
            )
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_heatmap_overlay(
    image: np.ndarray, cam: np.ndarray, path: str | Path, title: str | None = None
) -> Path:
    """Input image with the attribution map alpha-blended on top."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(3.2, 3.2))
    ax.imshow(np.clip(image, 0, 1))
    ax.imshow(cam, cmap="jet", alpha=0.45, vmin=0.0, vmax=1.0)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout(pad=0.2)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_layer_comparison(
    image: np.ndarray,
    cams_by_model: dict[str, list[np.ndarray]],
    layer_names: list[str],
    path: str | Path,
) -> Path:
    """Rows of layer-wise overlays, one row per model (side-by-side comparison)."""
    path = Path(path)
    n_rows = len(cams_by_model)
    n_cols = len(layer_names)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(2.4 * n_cols, 2.6 * n_rows))
    axes = np.atleast_2d(axes)
    for r, (model_name, cams) in enumerate(cams_by_model.items()):
        for c, (cam, layer) in enumerate(zip(cams, layer_names)):
            ax = axes[r, c]
            ax.imshow(np.clip(image, 0, 1))
            ax.imshow(cam, cmap="jet", alpha=0.45, vmin=0.0, vmax=1.0)
            ax.set_axis_off()
            if r == 0:
                ax.set_title(layer, fontsize=9)
            if c == 0:
                ax.text(
                    -0.08, 0.5, model_name, transform=ax.transAxes, fontsize=9,
                    rotation=90, va="center", ha="center",
                )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
