"""Figures for the train and analyze reports (Agg backend, files only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training(metrics: dict[str, np.ndarray], path) -> None:
    epochs = metrics["epoch"]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for key in ("J_giant", "J_dwarf"):
        axes[0].plot(epochs, metrics[key], marker="o", ms=3, label=key)
    axes[0].set_title("objectives")
    axes[0].legend()
    axes[1].plot(epochs, metrics["mean_lambda"], marker="o", ms=3, color="tab:purple")
    axes[1].set_title("mean multiplier")
    axes[1].set_ylim(0, 1)
    hv = metrics["hits1_valid"]
    if np.any(np.isfinite(hv)):
        axes[2].plot(epochs[np.isfinite(hv)], hv[np.isfinite(hv)], marker="o", ms=3, color="tab:green")
    axes[2].set_title("validation Hits@1")
    for ax in axes:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_similarity(ess: np.ndarray, css: np.ndarray, order: int, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.4))
    t = np.arange(1, len(ess) + 1)
    axes[0].plot(t, ess, label="ESS")
    axes[0].plot(t, css, label="CSS")
    axes[0].set_title("state similarity")
    axes[0].set_xlabel("epoch")
    axes[0].legend()
    if order:
        axes[1].plot(t[order:], np.diff(ess, order), label="ESS")
        axes[1].plot(t[order:], np.diff(css, order), label="CSS")
        axes[1].axhline(0, color="0.6", lw=0.8)
        axes[1].legend()
    axes[1].set_title(f"differenced (order {order})")
    axes[1].set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
