"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_boundary_traces(result, path, n_frames=None):
    """Accuracy against the number of shuffled leading / trailing frames."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.6), sharey=True)
        for ax, trace, star, title in (
            (axes[0], result.trace_first, result.ks_star, "first k frames shuffled"),
            (axes[1], result.trace_last, result.ke_star, "last k frames shuffled"),
        ):
            if trace:
                k, acc = zip(*trace)
                ax.plot(k, acc, marker="o", ms=3, lw=1)
            ax.axvline(star, color="k", ls="--", lw=0.8, label=f"k* = {star}")
            if n_frames:
                ax.set_xlim(0.5, n_frames + 0.5)
            ax.set_xlabel("k")
            ax.set_title(title)
            ax.legend(frameon=False)
        axes[0].set_ylabel("linear-probe accuracy")
        return _save(fig, path)


def plot_std_traces(logs: dict, path, accuracy: dict | None = None):
    """Embedding std per training step for each ablation variant."""
    with plt.rc_context(STYLE):
        ncols = 2 if accuracy else 1
        fig, axes = plt.subplots(1, ncols, figsize=(3.6 * ncols, 2.6), squeeze=False)
        ax = axes[0, 0]
        for name, log in logs.items():
            ax.plot(log.column("step"), log.column("embedding_std"), lw=1, label=name)
        ax.set_yscale("symlog", linthresh=1e-4)
        ax.set_xlabel("step")
        ax.set_ylabel("embedding std")
        ax.legend(frameon=False)
        if accuracy:
            ax = axes[0, 1]
            names = list(accuracy)
            ax.bar(np.arange(len(names)), [accuracy[n] for n in names], color="0.5")
            ax.set_xticks(np.arange(len(names)), names, rotation=30, ha="right")
            ax.set_ylabel("linear-probe accuracy")
        return _save(fig, path)


def plot_embeddings_2d(rows, path, title=None):
    """Scatter of the 2-D PCA export, coloured by label."""
    labels = np.array([-1 if r[1] is None else r[1] for r in rows])
    uv = np.array([(r[2], r[3]) for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.2))
        ax.scatter(uv[:, 0], uv[:, 1], c=labels, cmap="tab20", s=8, lw=0)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_loss_trace(log, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        for col in ("l1", "l2", "l3", "total"):
            ax.plot(log.column("step"), log.column(col), lw=1, label=col)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)
