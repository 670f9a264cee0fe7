"""Matplotlib rendering of the report figures: uplift curves per method and
the privacy-utility trade-off scatter. PNGs land next to the delimited
outputs; the CSV point files remain the canonical data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import warnings

import matplotlib.pyplot as plt
import numpy as np

from .config import METHOD_LABELS


def render_uplift_curves(outcome, path, dataset: str = "") -> None:
    """One line per method: mean defined uplift over the targeting grid."""
    by_method: dict[str, list] = {}
    for (method, _seed), cell in outcome.cells.items():
        by_method.setdefault(method, []).append(cell.curve)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for method, curves in by_method.items():
        grid = curves[0].grid
        stacked = np.vstack([c.values for c in curves])
        with warnings.catch_warnings():
            # grid points undefined in every seed yield empty nan-slices
            warnings.simplefilter("ignore", category=RuntimeWarning)
            mean = np.nanmean(stacked, axis=0)
        ax.plot(grid, mean, label=METHOD_LABELS.get(method, method), linewidth=1.4)
    ax.axhline(0.0, color="grey", linewidth=0.6)
    ax.set_xlabel("targeting fraction q")
    ax.set_ylabel("uplift u(q)")
    title = "Uplift curves under capacity targeting"
    if dataset:
        title += f" ({dataset})"
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={})
    plt.close(fig)


def render_privacy_sweep(means, path) -> None:
    """AUUC versus attack AUC for each defended operating point."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for point in means:
        label = f"σ={point.noise_sigma:g}, c={point.clip_norm:g}"
        ax.scatter(point.mia_auc, point.auuc, s=36)
        ax.annotate(label, (point.mia_auc, point.auuc), fontsize=7, xytext=(4, 4), textcoords="offset points")
    ax.axvline(0.5, color="grey", linewidth=0.6, linestyle="--")
    ax.set_xlabel("membership attack AUC")
    ax.set_ylabel("AUUC")
    ax.set_title("Privacy-utility trade-off")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={})
    plt.close(fig)
