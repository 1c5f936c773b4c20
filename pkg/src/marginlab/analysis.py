"""Geometry and robustness diagnostics.

Margins are estimated by radial bisection: probe directions fan out from
the point, each is bisected to the nearest prediction flip, and the
smallest flip radius is reported. That is an upper bound on the true
distance to the decision boundary which tightens as directions are added.
Grid maps evaluate a 2-D model on a lattice for plotting and for counting
prediction flips across training checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nnet, perturb, uncertainty
from .datasets import LabeledSet
from .perturb import PerturbSpec
from .seeding import child_rng


def accuracy(target, data: LabeledSet) -> float:
    """Fraction of samples whose predicted class matches the label."""
    pred = uncertainty.predict_class(target, data.samples)
    return float(np.mean(pred == data.labels))


@dataclass
class MarginSearch:
    """Radial-bisection parameters for margin_point."""

    n_directions: int = 64
    max_radius: float = 2.0
    coarse_steps: int = 64
    tol: float = 1e-4
    include_entropy_direction: bool = True
    seed: int = 0


@dataclass
class PointMargin:
    value: float
    censored: bool  # no flip found within max_radius in any direction


@dataclass
class MarginReport:
    """Per-point margins plus the dataset aggregates.

    Both the min and the max over points are reported; the min is the
    binding constraint every acceptance check uses. Misclassified points
    carry margin 0 and are flagged.
    """

    margins: np.ndarray
    censored: np.ndarray
    misclassified: np.ndarray
    min_margin: float = field(init=False)
    max_margin: float = field(init=False)
    binding_index: int = field(init=False)

    def __post_init__(self):
        self.min_margin = float(np.min(self.margins))
        self.max_margin = float(np.max(self.margins))
        self.binding_index = int(np.argmin(self.margins))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "margin", "censored", "misclassified"])
            for i in range(len(self.margins)):
                writer.writerow(
                    [i, f"{self.margins[i]:.12g}", int(self.censored[i]), int(self.misclassified[i])]
                )


def _probe_directions(target, x, search: MarginSearch) -> np.ndarray:
    rng = child_rng(search.seed, "margin-directions")
    d = len(x)
    dirs = rng.standard_normal((search.n_directions, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if search.include_entropy_direction:
        g = uncertainty.entropy_input_grad(target, x)
        norm = np.linalg.norm(g)
        if norm > 1e-12:
            dirs = np.vstack([dirs, g / norm])
    return dirs


def margin_point(target, x, search: MarginSearch | None = None) -> PointMargin:
    """Distance from x to the nearest prediction flip along any probe ray.

    Each ray is scanned coarsely out to max_radius, then the first
    flip-bracketing interval is bisected down to `tol`. When no ray flips,
    the result is max_radius with the censored flag set.
    """
    search = search or MarginSearch()
    x = np.asarray(x, dtype=float)
    own = uncertainty.predict_class(target, x)
    dirs = _probe_directions(target, x, search)
    n_dirs = dirs.shape[0]

    radii = search.max_radius * np.arange(1, search.coarse_steps + 1) / search.coarse_steps
    points = x[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    preds = uncertainty.predict_class(target, points.reshape(-1, len(x)))
    flips = preds.reshape(n_dirs, -1) != own
    any_flip = flips.any(axis=1)
    if not any_flip.any():
        return PointMargin(search.max_radius, censored=True)

    first = np.argmax(flips, axis=1)  # index of first flipped coarse radius
    hi = np.where(any_flip, radii[first], np.inf)
    lo = np.where(first > 0, radii[np.maximum(first - 1, 0)], 0.0)
    lo = np.where(any_flip, lo, 0.0)

    active = np.where(any_flip)[0]
    lo_a, hi_a = lo[active], hi[active]
    gap = search.max_radius / search.coarse_steps
    n_iters = max(1, int(np.ceil(np.log2(gap / search.tol))))
    for _ in range(n_iters):
        mid = 0.5 * (lo_a + hi_a)
        pts = x[None, :] + mid[:, None] * dirs[active]
        flipped = uncertainty.predict_class(target, pts) != own
        hi_a = np.where(flipped, mid, hi_a)
        lo_a = np.where(flipped, lo_a, mid)
    return PointMargin(float(hi_a.min()), censored=False)


def margin_dataset(target, data: LabeledSet, search: MarginSearch | None = None) -> MarginReport:
    """Aggregate margin_point over all samples; misclassified points score 0."""
    search = search or MarginSearch()
    preds = uncertainty.predict_class(target, data.samples)
    margins = np.zeros(data.size)
    censored = np.zeros(data.size, dtype=bool)
    misclassified = preds != data.labels
    for i in range(data.size):
        if misclassified[i]:
            continue
        pm = margin_point(target, data.samples[i], search)
        margins[i] = pm.value
        censored[i] = pm.censored
    return MarginReport(margins, censored, misclassified)


@dataclass
class GridMap:
    """Per-cell prediction, class-1 probability, and entropy on a 2-D lattice."""

    xs: np.ndarray
    ys: np.ndarray
    pred: np.ndarray      # (ny, nx) int
    prob1: np.ndarray     # (ny, nx)
    entropy: np.ndarray   # (ny, nx)

    def to_csv(self, path) -> None:
        """Rows sweep y (outer) then x (inner); columns x,y,pred,prob1,entropy."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "pred", "prob1", "entropy"])
            for iy, y in enumerate(self.ys):
                for ix, x in enumerate(self.xs):
                    writer.writerow(
                        [
                            f"{x:.12g}",
                            f"{y:.12g}",
                            int(self.pred[iy, ix]),
                            f"{self.prob1[iy, ix]:.12g}",
                            f"{self.entropy[iy, ix]:.12g}",
                        ]
                    )


def _lattice(x_range, y_range, resolution):
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be >= 2 per axis")
    xs = np.linspace(x_range[0], x_range[1], int(nx))
    ys = np.linspace(y_range[0], y_range[1], int(ny))
    gx, gy = np.meshgrid(xs, ys)
    return xs, ys, np.column_stack([gx.ravel(), gy.ravel()])


def grid_map(target, x_range, y_range, resolution=100) -> GridMap:
    """Evaluate a 2-D classifier on the lattice spanning the given ranges."""
    ens = uncertainty.as_ensemble(target)
    if ens.input_dim != 2:
        raise ValueError(f"grid_map needs 2-D inputs, model takes {ens.input_dim}")
    xs, ys, pts = _lattice(x_range, y_range, resolution)
    probs = uncertainty.avg_prediction(ens, pts)
    shape = (len(ys), len(xs))
    return GridMap(
        xs=xs,
        ys=ys,
        pred=np.argmax(probs, axis=1).reshape(shape),
        prob1=probs[:, 1].reshape(shape),
        entropy=np.asarray(nnet.entropy_of_probs(probs)).reshape(shape),
    )


def oscillation_map(checkpoints, x_range, y_range, resolution=100) -> np.ndarray:
    """Per-cell count of prediction changes between consecutive checkpoints."""
    if len(checkpoints) < 2:
        raise ValueError("need at least two checkpoints")
    _, _, pts = _lattice(x_range, y_range, resolution)
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    preds = np.stack([uncertainty.predict_class(ck, pts) for ck in checkpoints])
    counts = (preds[1:] != preds[:-1]).sum(axis=0)
    return counts.reshape(int(ny), int(nx))


def robust_accuracy(target, data: LabeledSet, attack: PerturbSpec, rng=None) -> float:
    """Fraction still correct after attacking each point with the frozen model.

    A point counts as robustly correct only if it is classified correctly
    both clean and perturbed (the zero perturbation is always available to
    the attacker), so the result never exceeds clean accuracy.
    """
    if attack.method not in ("fgsm", "ldp-pgd"):
        raise ValueError(f"robust_accuracy evaluates fgsm or ldp-pgd, got {attack.method!r}")
    if attack.entry != "input":
        raise ValueError("robust_accuracy evaluates input-space attacks")
    clean_ok = uncertainty.predict_class(target, data.samples) == data.labels
    if attack.epsilon == 0:
        return float(np.mean(clean_ok))
    res = perturb.perturb(target, data.samples, attack, label=data.labels, rng=rng)
    adv = uncertainty.predict_class(target, data.samples + res.delta)
    return float(np.mean(clean_ok & (adv == data.labels)))


def crossing_rate(target, data: LabeledSet, spec: PerturbSpec, rng=None) -> float:
    """Fraction of samples whose prediction flips at the perturbed point."""
    res = perturb.perturb(target, data.samples, spec, label=data.labels, rng=rng)
    return float(np.mean(res.crossed_boundary))
