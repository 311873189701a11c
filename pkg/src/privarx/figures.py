"""Figure rendering for experiment outputs.

Every report path that writes a CSV also renders the matching PNG next to
it.  The CSV stays the canonical machine-readable artifact; the figures are
for eyeballing convergence and sweep trends.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .harness import RunRecord, SweepResult  # noqa: E402

__all__ = ["render_error_curves", "render_sweep_curve"]


def render_error_curves(records: list[RunRecord], path,
                        bound: float | None = None) -> Path:
    """Log-log estimate-error trajectories: one faint line per seed plus the
    seed-mean, with an optional horizontal line for a closed-form bound."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    common_k = None
    stacked = []
    for rec in records:
        if rec.rows.shape[0] == 0:
            continue
        k = rec.rows[:, 0]
        err = rec.rows[:, 1]
        ax.loglog(k, np.maximum(err, 1e-300), color="steelblue", alpha=0.25,
                  linewidth=0.8)
        if common_k is None:
            common_k = k
        if common_k is not None and k.shape == common_k.shape and np.array_equal(k, common_k):
            stacked.append(err)
    if common_k is not None and stacked:
        mean_err = np.mean(np.vstack(stacked), axis=0)
        ax.loglog(common_k, np.maximum(mean_err, 1e-300), color="crimson",
                  linewidth=1.8, label="seed mean")
    if bound is not None and bound > 0:
        ax.axhline(bound, color="black", linestyle="--", linewidth=1.0,
                   label="closed-form bound")
    ax.set_xlabel("step k")
    ax.set_ylabel(r"$\|\theta_k - \theta\|_2$")
    ax.set_title("Estimate error under privatized signals")
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep_curve(result: SweepResult, path) -> Path:
    """Seed-mean final error versus the sweep axis (log-log), with per-seed
    scatter behind it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for value, group in zip(result.values, result.records):
        finals = [r.summary["final_err"] for r in group]
        ax.plot([value] * len(finals), finals, ".", color="steelblue",
                alpha=0.4, markersize=4)
    ax.plot(result.values, result.mean_final_err, "o-", color="crimson",
            linewidth=1.8, label="seed mean")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(result.axis)
    ax.set_ylabel("final estimate error")
    ax.set_title(f"Final error across {result.axis}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
