"""CSV and figure emission for experiment runs.

Figures are matplotlib SVGs written next to the delimited output. The SVG
hash salt is pinned and date metadata dropped, so re-running a config
reproduces every artifact byte for byte; the determinism contract is
checked on the CSV hashes. Heatmaps use the viridis ramp for entropy and
oscillation counts and coolwarm for class-1 probability (low = class 0,
high = class 1); both are noted in the README.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "marginlab"

import matplotlib.pyplot as plt
import numpy as np

PROB_CMAP = "coolwarm"
ENTROPY_CMAP = "viridis"
CLASS_COLORS = ("tab:blue", "tab:red")
_SVG_META = {"Date": None}


def write_csv(path, header, rows) -> None:
    """Floats rendered with %.12g so output is locale- and run-stable."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir: Path, experiment: str, seed: int, files: list[Path]) -> Path:
    entries = [
        {"path": str(p.relative_to(outdir)), "sha256": sha256_file(p)}
        for p in sorted(files)
    ]
    manifest = {"experiment": experiment, "seed": seed, "files": entries}
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def save_boundary_figure(path, gridmap, data=None, title="") -> None:
    """Class-1 probability heatmap with the dataset scattered on top."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    extent = (gridmap.xs[0], gridmap.xs[-1], gridmap.ys[0], gridmap.ys[-1])
    im = ax.imshow(
        gridmap.prob1, origin="lower", extent=extent, cmap=PROB_CMAP,
        vmin=0.0, vmax=1.0, aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="class-1 probability")
    ax.contour(gridmap.xs, gridmap.ys, gridmap.prob1, levels=[0.5], colors="k", linewidths=1.0)
    if data is not None:
        for cls, color in enumerate(CLASS_COLORS):
            pts = data.samples[data.labels == cls]
            ax.scatter(pts[:, 0], pts[:, 1], s=12, c=color, edgecolors="k", linewidths=0.3)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def save_heatmap(path, xs, ys, values, label, title="", data=None, cmap=ENTROPY_CMAP) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(
        values, origin="lower", extent=(xs[0], xs[-1], ys[0], ys[-1]),
        cmap=cmap, aspect="auto",
    )
    fig.colorbar(im, ax=ax, label=label)
    if data is not None:
        for cls, color in enumerate(CLASS_COLORS):
            pts = data.samples[data.labels == cls]
            ax.scatter(pts[:, 0], pts[:, 1], s=10, c=color, edgecolors="k", linewidths=0.3)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def save_lines(path, xlabel, ylabel, series: dict, title="", logy=False) -> None:
    """series maps legend label -> (x array, y array)."""
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_histogram(path, edges, counts, xlabel, title="") -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k", linewidth=0.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
