"""Figure rendering for run and comparison reports.

Every figure is written straight to a file next to the delimited output;
nothing requires a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import EfficiencyTable
from .mcmc import ChainResult


def trace_figure(result: ChainResult, path: Path | str, max_points: int = 5000) -> None:
    """Per-dimension trace plots with the burn-in boundary marked."""
    n = result.dim
    stride = max(1, result.n_steps // max_points)
    idx = np.arange(0, result.n_steps, stride)
    fig, axes = plt.subplots(n, 1, figsize=(8, 1.8 * n), sharex=True, squeeze=False)
    for d in range(n):
        ax = axes[d, 0]
        ax.plot(idx, result.samples[idx, d], lw=0.4)
        ax.axvline(result.burn_in, color="tab:red", lw=0.8, ls="--")
        ax.set_ylabel(f"x{d + 1}")
    axes[-1, 0].set_xlabel("step")
    fig.suptitle(f"{result.name}: traces (dashed line = end of burn-in)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def scatter_figure(result: ChainResult, path: Path | str, max_points: int = 20000) -> None:
    """Pairwise scatter of the first two post-burn-in coordinates, or a
    histogram in one dimension."""
    kept = result.post_burn_in()
    stride = max(1, kept.shape[0] // max_points)
    kept = kept[::stride]
    fig, ax = plt.subplots(figsize=(5, 4.5))
    if result.dim == 1:
        ax.hist(kept[:, 0], bins=80, density=True, color="tab:blue", alpha=0.8)
        ax.set_xlabel("x1")
    else:
        ax.scatter(kept[:, 0], kept[:, 1], s=2, alpha=0.25, linewidths=0)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(f"{result.name}: post-burn-in samples")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def discrepancy_figure(result: ChainResult, path: Path | str) -> None:
    """Map-discrepancy estimate at every adaptation event."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if result.discrepancy_history:
        steps, values = zip(*result.discrepancy_history)
        ax.semilogy(steps, values, marker="o", ms=3)
    ax.set_xlabel("step")
    ax.set_ylabel("discrepancy variance")
    ax.set_title(f"{result.name}: map convergence monitor")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def comparison_figure(table: EfficiencyTable, path: Path | str) -> None:
    """Bar chart of relative efficiency per target evaluation."""
    names = [row.name for row in table.rows]
    rel = [row.rel_ess_per_eval for row in table.rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(names)), 3.8))
    ax.bar(names, rel, color="tab:blue")
    ax.axhline(1.0, color="tab:red", lw=0.8)
    ax.set_ylabel(f"ESS/eval relative to {table.baseline}")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
