"""Static vector-graphics outputs: OD heatmaps, margin charts, MSE curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import as_matrix

__all__ = ["heatmap_svg", "margins_svg", "robustness_curves_svg", "normality_curves_svg"]


def heatmap_svg(matrix, station_ids, path, title: str = "") -> None:
    """Grey-scale OD heatmap; the darker the cell, the more passengers."""
    a = as_matrix(matrix)
    n = a.shape[0]
    fig, ax = plt.subplots(figsize=(0.6 * n + 2.2, 0.6 * n + 1.8))
    im = ax.imshow(a, cmap="Greys", vmin=0.0)
    ax.set_xticks(range(n), station_ids, rotation=45, ha="right")
    ax.set_yticks(range(n), station_ids)
    ax.set_xlabel("destination")
    ax.set_ylabel("origin")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85, label="passengers")
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)


def margins_svg(departures, arrivals, station_ids, path, title: str = "") -> None:
    """Paired bars of expected entries/exits per station."""
    dep = np.asarray(departures, dtype=float)
    arr = np.asarray(arrivals, dtype=float)
    n = len(dep)
    x = np.arange(n)
    fig, ax = plt.subplots(figsize=(0.9 * n + 2.5, 3.6))
    ax.bar(x - 0.2, dep, width=0.4, label="departures", color="#355c7d")
    ax.bar(x + 0.2, arr, width=0.4, label="arrivals", color="#99b898")
    ax.set_xticks(x, station_ids, rotation=45, ha="right")
    ax.set_ylabel("passengers per day")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)


def robustness_curves_svg(results, path, noise_kind: str) -> None:
    """log10 MSE versus noise level, one line per (method, T)."""
    rows = [r for r in results if r.noise_kind == noise_kind]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    keys = sorted({(r.method, r.T) for r in rows})
    for method, T in keys:
        pts = sorted(
            [(r.eta, r.mse) for r in rows if r.method == method and r.T == T]
        )
        if not pts:
            continue
        etas = [p[0] for p in pts]
        vals = [np.log10(max(p[1], 1e-300)) for p in pts]
        ax.plot(etas, vals, marker="o", label=f"{method}, T={T}")
    ax.set_xlabel("noise level")
    ax.set_ylabel("log10 MSE")
    ax.set_title(f"survey bias robustness ({noise_kind} noise)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)


def normality_curves_svg(rows, path) -> None:
    """p-value versus day count, one line per eigenvalue component."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    comps = sorted({r["component"] for r in rows})
    for k in comps:
        pts = sorted([(r["T"], r["p_value"]) for r in rows if r["component"] == k])
        ax.plot([p[0] for p in pts], [max(p[1], 1e-12) for p in pts],
                marker="o", label=f"component {k}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.axhline(0.05, color="grey", linestyle="--", linewidth=0.8)
    ax.set_xlabel("days")
    ax.set_ylabel("normality p-value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)
