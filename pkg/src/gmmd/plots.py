"""Static SVG plots for experiment reports.

SVGs are rendered with a fixed hash salt and no date metadata so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "gmmd"

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_score_plot(path, xs, scores, xlabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, scores, marker="o", lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("GMMD$^2$")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_regression_plot(path, xs, ys, slope, intercept, rho, xlabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(xs, ys, s=18)
    lo, hi = min(xs), max(xs)
    ax.plot([lo, hi], [slope * lo + intercept, slope * hi + intercept],
            color="crimson", lw=1.2, label=f"fit (rho={rho:.3f})")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_gamma_sweep_plot(path, factors, synth_scores, real_scores, title: str) -> None:
    import numpy as np

    idx = np.arange(len(factors))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(idx - width / 2, synth_scores, width, label="synthetic")
    ax.bar(idx + width / 2, real_scores, width, label="real")
    ax.set_xticks(idx, [f"{f:g}x" for f in factors])
    ax.set_xlabel("gamma factor (x gamma_med)")
    ax.set_ylabel("GMMD$^2$")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_meta_per_type_plot(path, per_type_scores: dict[int, tuple[float, ...]], title: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for type_id, scores in sorted(per_type_scores.items()):
        ax.plot(range(1, len(scores) + 1), scores, marker=".", lw=1, label=f"type {type_id}")
    ax.set_xlabel("severity level")
    ax.set_ylabel("GMMD$^2$")
    ax.set_title(title)
    if len(per_type_scores) <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
