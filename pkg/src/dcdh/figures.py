"""Matplotlib renderings of the CSV outputs (loss history, precision curve).

Figures are written straight to files with the Agg backend and stripped
metadata so repeated runs produce byte-identical images.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def save_history_figure(history, path: str) -> None:
    """Plot weighted per-epoch loss contributions and the total."""
    epochs = [row.epoch for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [row.l1 for row in history], label="visual stream")
    if any(row.l2 != 0.0 for row in history):
        ax.plot(epochs, [row.l2 for row in history], label="label stream")
    if any(row.l3 != 0.0 for row in history):
        ax.plot(epochs, [row.l3 for row in history], label="fused stream")
    ax.plot(epochs, [row.total for row in history], "k--", label="total")
    ax.set_xlabel("epoch")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_precision_curve(ks, precisions, path: str) -> None:
    """Plot precision at top-K against K."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(ks, precisions, marker="o")
    ax.set_xlabel("top K returned")
    ax.set_ylabel("precision")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
