"""Figures written next to the CSV outputs (headless Agg backend)."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .measures import GridFunction  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_crossing_series(times: np.ndarray, crossings: np.ndarray, path: str | Path, title: str = "") -> Path:
    """One step line per replica; ``crossings`` has shape (replicas, times)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, row in enumerate(np.atleast_2d(crossings)):
        ax.step(times, row + 0.03 * k, where="post", lw=1, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("crossings of Y_t")
    ax.set_title(title or "crossing series per replica")
    ax.yaxis.get_major_locator().set_params(integer=True)
    return _save(fig, path)


def plot_snapshots(series: Sequence[GridFunction], path: str | Path, title: str = "", overlay=None) -> Path:
    """Grid snapshots; ``overlay`` maps time to an extra GridFunction drawn dashed."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    cmap = plt.get_cmap("viridis")
    for k, g in enumerate(series):
        colour = cmap(k / max(len(series) - 1, 1))
        ax.plot(g.x, g.values, color=colour, lw=1.2, label=f"t={g.time:g}")
        if overlay and g.time in overlay:
            o = overlay[g.time]
            ax.step(o.x, o.values, where="mid", color=colour, ls="--", lw=0.8)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_atoms(sites: np.ndarray, weights: np.ndarray, path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pos = weights > 0
    ax.vlines(sites[pos], 0, weights[pos], color="tab:red", label="positive")
    ax.vlines(sites[~pos], 0, weights[~pos], color="tab:blue", label="negative")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("site")
    ax.set_ylabel("mass")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)
