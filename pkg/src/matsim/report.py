"""Matplotlib figure rendering for CLI report outputs.

Figures are written next to the delimited outputs; every function takes an
explicit output path and returns it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_loss_trace(trace, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(trace)), trace, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_projection(material_ids, coords, path: Path, clusters=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    coords = np.asarray(coords)
    if clusters is not None:
        sc = ax.scatter(coords[:, 0], coords[:, 1], c=clusters, cmap="tab10", s=30)
        fig.colorbar(sc, ax=ax, label="cluster")
    else:
        ax.scatter(coords[:, 0], coords[:, 1], s=30)
    for mid, (x, y) in zip(material_ids, coords):
        ax.annotate(mid, (x, y), fontsize=6, alpha=0.7)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("2D feature projection")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_elbow(results, threshold: float, path: Path) -> Path:
    ks = [r.k for r in results]
    ev = [r.explained_variance for r in results]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, ev, marker="o")
    ax.axhline(threshold, ls="--", color="gray", label=f"threshold {threshold}")
    ax.set_xlabel("k")
    ax.set_ylabel("explained variance")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("Elbow selection")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_convergence(iterations, mean_igs, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(iterations, np.maximum(mean_igs, 1e-12), marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean information gain (bits)")
    ax.set_title("Adaptive sampling convergence")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_gamut_trace(trace, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(range(len(trace)), np.maximum(trace, 1e-16), marker=".")
    ax.set_xlabel("accepted step")
    ax.set_ylabel("objective")
    ax.set_title("Gamut mapping descent")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
