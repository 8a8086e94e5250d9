"""Headless figure rendering for the CLI report paths: every plot is written
straight to a file next to the delimited output it visualizes."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ComparisonRecord
from .ode import Trajectory

__all__ = [
    "plot_trajectory",
    "plot_benchmark",
    "plot_spectrum",
    "plot_epoch_losses",
]


def plot_trajectory(traj: Trajectory, path) -> Path:
    """Loss and gradient norm along the flow, on log axes."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    pos = traj.times > 0
    axes[0].loglog(traj.times[pos], np.maximum(traj.losses[pos], 1e-300))
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("loss")
    axes[1].loglog(traj.times[pos], np.maximum(traj.grad_norms[pos], 1e-300))
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("gradient norm")
    fig.suptitle(f"flow trajectory ({traj.metadata.get('method', '?')})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_benchmark(records: list[ComparisonRecord], path) -> Path:
    """Median distance-to-reference and progress versus CPU budget."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    methods = sorted({r.method for r in records})
    budgets = sorted({r.budget_s for r in records})
    for m in methods:
        med_d, med_t = [], []
        for b in budgets:
            vals = [r for r in records if r.method == m and r.budget_s == b]
            med_d.append(np.median([r.d_m for r in vals]) if vals else np.nan)
            med_t.append(np.median([r.t_m for r in vals]) if vals else np.nan)
        axes[0].loglog(budgets, med_d, marker="o", label=m)
        axes[1].loglog(budgets, np.maximum(med_t, 1e-300), marker="o", label=m)
    axes[0].set_xlabel("CPU budget [s]")
    axes[0].set_ylabel("median $d_m$")
    axes[1].set_xlabel("CPU budget [s]")
    axes[1].set_ylabel("median $t_m$")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_spectrum(eigenvalues: np.ndarray, path) -> Path:
    """Ascending eigenvalues on a symmetric-log axis."""
    path = Path(path)
    eigenvalues = np.asarray(eigenvalues)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(eigenvalues)), eigenvalues, ".", markersize=4)
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.axhline(0.0, color="gray", lw=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_epoch_losses(epoch_losses, path) -> Path:
    """Epoch-end loss sequence from the convergence protocol."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(
        np.arange(1, len(epoch_losses) + 1),
        np.maximum(epoch_losses, 1e-300),
        marker="o",
    )
    ax.set_xlabel("epoch")
    ax.set_ylabel("epoch-end loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
