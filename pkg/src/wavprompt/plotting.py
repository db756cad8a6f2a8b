"""Matplotlib renderings of result matrices, attention maps and training curves.

All figures are written to files with the non-interactive Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_matrix(matrix, path, title: str = "EER (%)") -> Path:
    vals = matrix.with_avg()
    fig, ax = plt.subplots(figsize=(1.3 * vals.shape[1] + 2, 0.6 * vals.shape[0] + 1.6))
    im = ax.imshow(vals, cmap="viridis_r", aspect="auto", vmin=0.0, vmax=max(50.0, float(vals.max())))
    ax.set_xticks(range(vals.shape[1]), matrix.columns)
    ax.set_yticks(range(vals.shape[0]), matrix.row_names)
    for i in range(vals.shape[0]):
        for j in range(vals.shape[1]):
            ax.text(j, i, f"{vals[i, j]:.2f}", ha="center", va="center",
                    color="white" if vals[i, j] > 25 else "black", fontsize=9)
    ax.set_xlabel("evaluated on")
    ax.set_ylabel("trained on")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_attention(attn: np.ndarray, labels: list[str], path, title: str = "last-layer attention") -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(attn, cmap="magma", aspect="auto")
    # mark the boundaries between legend groups
    edges = [i for i in range(1, len(labels)) if labels[i] != labels[i - 1]]
    for e in edges:
        ax.axhline(e - 0.5, color="cyan", lw=0.6)
        ax.axvline(e - 0.5, color="cyan", lw=0.6)
    ax.set_xlabel("key row")
    ax.set_ylabel("query row")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_training_curve(history, path, title: str = "training") -> Path:
    epochs = [r.epoch for r in history]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, [r.train_loss for r in history], "o-", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [100 * r.dev_eer for r in history], "s--", color="tab:red", label="dev EER")
    ax2.set_ylabel("dev EER (%)")
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_embeddings(emb: np.ndarray, groups: list[str], path, title: str = "embeddings (PCA)") -> Path:
    """2-D PCA scatter of exported embeddings, one colour per group."""
    x = emb - emb.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    xy = x @ vt[:2].T
    fig, ax = plt.subplots(figsize=(6, 5))
    for g in sorted(set(groups)):
        m = np.array([v == g for v in groups])
        ax.scatter(xy[m, 0], xy[m, 1], s=10, label=g)
    ax.legend(fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
