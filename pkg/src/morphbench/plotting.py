"""Figure rendering for reports: score distributions and matrix heatmaps.

Uses the non-interactive Agg backend so figures render to files in
headless environments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics.mapmatrix import MapMatrix  # noqa: E402


def plot_score_distributions(samples: Mapping[tuple[str, str], Sequence[float]],
                             out_path: Path | str,
                             title: str | None = None,
                             bins: int = 20) -> Path:
    """Density curves, one per method, with one panel per dataset.

    ``samples`` maps (method, dataset) to the raw scores. Histogram
    densities are drawn as lines so several methods stay readable in one
    panel.
    """
    if not samples:
        raise ValueError("no score samples to plot")
    datasets = sorted({ds for _, ds in samples})
    methods = sorted({m for m, _ in samples})
    fig, axes = plt.subplots(1, len(datasets),
                             figsize=(4.5 * len(datasets), 3.5),
                             squeeze=False)
    for ax, dataset in zip(axes[0], datasets):
        for method in methods:
            values = samples.get((method, dataset))
            if not values:
                continue
            density, edges = np.histogram(values, bins=bins, density=True)
            centers = (edges[:-1] + edges[1:]) / 2
            ax.plot(centers, density, label=method)
        ax.set_title(dataset)
        ax.set_xlabel("score")
        ax.set_ylabel("density")
        ax.legend(fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_map_heatmap(matrix: MapMatrix, out_path: Path | str) -> Path:
    """Annotated heatmap of the acceptance matrix, one decimal per cell."""
    values = np.asarray(matrix.values, dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 * values.shape[1] + 2,
                                    0.9 * values.shape[0] + 2))
    im = ax.imshow(values, cmap="viridis", vmin=0.0, vmax=100.0)
    ax.set_xticks(range(values.shape[1]),
                  [str(c) for c in range(1, values.shape[1] + 1)])
    ax.set_yticks(range(values.shape[0]),
                  [str(r) for r in range(1, values.shape[0] + 1)])
    ax.set_xlabel("minimum accepting systems")
    ax.set_ylabel("minimum matching attempts")
    threshold = values.max() / 2 if values.size else 0.0
    for r in range(values.shape[0]):
        for c in range(values.shape[1]):
            color = "black" if values[r, c] > threshold else "white"
            ax.text(c, r, f"{values[r, c]:.1f}", ha="center", va="center",
                    color=color, fontsize=9)
    ax.set_title(f"{matrix.semantics}, {matrix.morph_count} morphs, "
                 f"FMR target {matrix.target_fmr:g}")
    fig.colorbar(im, ax=ax, label="% of morphs")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
