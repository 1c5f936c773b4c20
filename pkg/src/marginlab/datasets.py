"""Synthetic binary datasets, IDX ingestion, and distance diagnostics.

Four generators: a staircase corridor whose cross-class gap grows
monotonically along it, a linear-feature-plus-slabs set where the easy
one-feature boundary has a far smaller margin than the slab boundary, a
pair of cluster pairs with very different gaps, and a 1-D two-Gaussian
mixture. All generator defaults live in the constants block below;
everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .seeding import child_rng

# ---------------------------------------------------------------------------
# Generator default geometry (one place, so experiments and tests agree).
# ---------------------------------------------------------------------------

NC_GAP_MIN = 0.1        # cross-class gap at the narrow end of the corridor
NC_GAP_MAX = 0.9        # gap at the wide end
NC_X_LO, NC_X_HI = 0.08, 0.92   # corridor extent along x
NC_TREADS = 8           # staircase treads per chain
NC_MID = 0.5            # center height the zigzag midline oscillates around
NC_ZIGZAG = 0.45        # fraction of the free vertical room the midline swings over
NC_Y_MARGIN = 0.03      # clearance kept from the unit-square edges
NC_NOISE = 0.002        # coordinate jitter

LMS5_M_LIN = 0.05       # margin of the one-feature vertical boundary
LMS5_M_SLAB = 0.4       # gap between adjacent slabs
LMS5_SLAB_H = 0.2       # slab thickness
LMS5_X_MAX = 1.0        # horizontal extent of each class column
LMS5_SLABS = 5

TWO_DIST_GAP_SMALL = 0.1
TWO_DIST_GAP_LARGE = 1.0
TWO_DIST_BOX = 0.15     # cluster box half-width
TWO_DIST_CENTERS = (-1.25, 1.25)

DEFAULT_POINTS = 32

SYNTH_KINDS = ("narrow-corridor", "lms5", "two-distance", "gauss1d")


class IdxParseError(ValueError):
    """An IDX file failed to parse; message carries the byte offset."""


@dataclass
class LabeledSet:
    """Dense samples with integer class labels."""

    samples: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"samples must be a non-empty N x d matrix, got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must match sample count")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite coordinates")
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def to_csv(self, path) -> None:
        """Header x_0..x_{d-1},label; one row per sample."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i}" for i in range(self.dim)] + ["label"])
            for row, lbl in zip(self.samples, self.labels):
                writer.writerow([f"{v:.17g}" for v in row] + [int(lbl)])

    @classmethod
    def from_csv(cls, path) -> "LabeledSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "label":
                raise ValueError(f"{path}: expected trailing 'label' column, got {header}")
            rows = [(list(map(float, r[:-1])), int(r[-1])) for r in reader]
        samples = np.array([r[0] for r in rows])
        labels = np.array([r[1] for r in rows])
        return cls(samples, labels, class_count=int(labels.max()) + 1)


@dataclass
class SynthSpec:
    """Which generator to run and with what geometry.

    Fields left at None fall back to the kind's defaults above. `noise`
    only matters for the corridor (the other generators draw coordinates
    uniformly inside their shapes already).
    """

    kind: str
    points_per_cluster: int = DEFAULT_POINTS
    noise: float | None = None
    seed: int = 0
    gap_min: float | None = None        # narrow-corridor
    gap_max: float | None = None
    m_lin: float | None = None          # lms5
    m_slab: float | None = None
    gap_small: float | None = None      # two-distance
    gap_large: float | None = None
    mu1: float | None = None            # gauss1d
    mu2: float | None = None
    sigma: float | None = None

    def violations(self) -> list[str]:
        out = []
        if self.kind not in SYNTH_KINDS:
            out.append(f"kind: unknown {self.kind!r}; expected one of {SYNTH_KINDS}")
            return out
        if self.points_per_cluster < 1:
            out.append("points_per_cluster: must be >= 1")
        if self.noise is not None and self.noise < 0:
            out.append("noise: must be >= 0")
        if self.kind == "narrow-corridor":
            lo = NC_GAP_MIN if self.gap_min is None else self.gap_min
            hi = NC_GAP_MAX if self.gap_max is None else self.gap_max
            if lo <= 0:
                out.append("gap_min: must be > 0")
            if lo >= hi:
                out.append(f"gap_min: must be < gap_max, got {lo} >= {hi}")
        elif self.kind == "lms5":
            lin = LMS5_M_LIN if self.m_lin is None else self.m_lin
            slab = LMS5_M_SLAB if self.m_slab is None else self.m_slab
            if lin <= 0:
                out.append("m_lin: must be > 0")
            if slab <= lin:
                out.append(f"m_slab: must exceed m_lin (the gap ordering is the point), got {slab} <= {lin}")
        elif self.kind == "two-distance":
            small = TWO_DIST_GAP_SMALL if self.gap_small is None else self.gap_small
            large = TWO_DIST_GAP_LARGE if self.gap_large is None else self.gap_large
            if small <= 0 or large <= 0:
                out.append("gap_small/gap_large: must be > 0")
        elif self.kind == "gauss1d":
            m1 = -1.0 if self.mu1 is None else self.mu1
            m2 = 1.0 if self.mu2 is None else self.mu2
            if m1 >= m2:
                out.append(f"mu1: must be < mu2, got {m1} >= {m2}")
            if self.sigma is not None and self.sigma < 0:
                out.append("sigma: must be >= 0")
        return out

    def _check(self):
        violations = self.violations()
        if violations:
            raise ValueError("; ".join(violations))


def generate(spec: SynthSpec) -> LabeledSet:
    """Dispatch to the generator named by spec.kind."""
    gen = {
        "narrow-corridor": gen_narrow_corridor,
        "lms5": gen_lms5,
        "two-distance": gen_two_distance,
        "gauss1d": gen_gauss1d,
    }.get(spec.kind)
    if gen is None:
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    return gen(spec)


def nc_tread_geometry(gap_min: float, gap_max: float, treads: int):
    """Per-tread (gap, midline height) for the corridor staircase.

    Gaps grow linearly from gap_min to gap_max. The midline switches back
    hard between treads while the corridor is narrow enough to afford full
    flips without pinching the cross-class clearance below the local gap,
    then tapers gently (steps bounded by half the gap increment) once the
    corridor widens. No straight line can follow the switchbacks, which is
    what separates lazy boundaries from centered ones.
    """
    frac = np.arange(treads) / max(treads - 1, 1)
    gaps = gap_min + (gap_max - gap_min) * frac
    dg = gaps[1] - gaps[0] if treads > 1 else 0.0
    room = (1.0 - 2 * NC_Y_MARGIN - gaps) / 2.0

    z = np.zeros(treads)
    sign = 1.0
    s = 0
    z[0] = sign * NC_ZIGZAG * room[0]
    while s + 1 < treads:
        swing = NC_ZIGZAG * (room[s] + room[s + 1])
        needed = (gaps[s] + gaps[s + 1]) / 2.0 + gaps[s] + 0.02
        if swing < needed:
            break
        sign = -sign
        z[s + 1] = sign * NC_ZIGZAG * room[s + 1]
        s += 1
    for t in range(s + 1, treads):  # taper toward the center line
        step = 0.9 * dg / 2.0
        z[t] = max(z[t - 1] - step, 0.0) if sign > 0 else min(z[t - 1] + step, 0.0)
    return gaps, NC_MID + z


def gen_narrow_corridor(spec: SynthSpec) -> LabeledSet:
    """Two interleaved staircase chains whose gap widens along the corridor.

    Each chain is a staircase of NC_TREADS treads straddling a zigzag
    midline: class 1 sits half the local gap above it, class 0 half below.
    Points on a tread interleave with the opposite chain's at half-spacing
    offsets, so nearest-opposite distances equal the per-tread gaps and
    grow monotonically along the corridor.
    """
    spec._check()
    rng = child_rng(spec.seed, "narrow-corridor")
    n = spec.points_per_cluster
    gap_min = NC_GAP_MIN if spec.gap_min is None else spec.gap_min
    gap_max = NC_GAP_MAX if spec.gap_max is None else spec.gap_max
    noise = NC_NOISE if spec.noise is None else spec.noise

    treads = min(NC_TREADS, n)
    tread_w = (NC_X_HI - NC_X_LO) / treads
    gaps, mid = nc_tread_geometry(gap_min, gap_max, treads)
    per_tread = [n // treads + (1 if i < n % treads else 0) for i in range(treads)]
    parts, labels = [], []
    for cls, phase in ((1, 0.25), (0, 0.75)):
        xs, ys = [], []
        for s in range(treads):
            k = per_tread[s]
            y = mid[s] + (0.5 if cls == 1 else -0.5) * gaps[s]
            x0 = NC_X_LO + s * tread_w
            xs.extend(x0 + tread_w * (i + phase) / k for i in range(k))
            ys.extend([y] * k)
        pts = np.column_stack([xs, ys]) + noise * rng.standard_normal((n, 2))
        parts.append(pts)
        labels.append(np.full(n, cls))
    return LabeledSet(np.vstack(parts), np.concatenate(labels), class_count=2)


def gen_lms5(spec: SynthSpec) -> LabeledSet:
    """Linear feature with a tiny margin plus five alternating slabs.

    Coordinate 0 separates the classes on its own with margin m_lin (the
    innermost point of each class is anchored at exactly +-m_lin).
    Coordinate 1 splits each class across alternating slabs separated by
    gaps of m_slab, so a boundary that uses it earns margin ~ m_slab/2.
    """
    spec._check()
    rng = child_rng(spec.seed, "lms5")
    n = spec.points_per_cluster
    m_lin = LMS5_M_LIN if spec.m_lin is None else spec.m_lin
    m_slab = LMS5_M_SLAB if spec.m_slab is None else spec.m_slab

    pitch = LMS5_SLAB_H + m_slab
    total = LMS5_SLABS * LMS5_SLAB_H + (LMS5_SLABS - 1) * m_slab
    slabs_for = {0: (0, 2, 4), 1: (1, 3)}
    parts, labels = [], []
    for cls, sign in ((0, -1.0), (1, 1.0)):
        x = sign * rng.uniform(m_lin, LMS5_X_MAX, size=n)
        own = slabs_for[cls]
        slab_idx = np.array([own[i % len(own)] for i in range(n)])
        # One anchor per slab at exactly +-m_lin pins the vertical
        # boundary's margin; the boundary cannot bulge around them.
        x[: len(own)] = sign * m_lin
        y = slab_idx * pitch + rng.uniform(0.0, LMS5_SLAB_H, size=n) - total / 2
        y[: len(own)] = np.array(own) * pitch + LMS5_SLAB_H / 2 - total / 2  # slab centers
        parts.append(np.column_stack([x, y]))
        labels.append(np.full(n, cls))
    return LabeledSet(np.vstack(parts), np.concatenate(labels), class_count=2)


def gen_two_distance(spec: SynthSpec) -> LabeledSet:
    """Two cross-class cluster pairs with gaps gap_small and gap_large.

    Each region holds a class-0 box below y=0 and a class-1 box above it;
    the inner box edges sit at half the region's gap, with one anchor
    point per cluster exactly on the inner edge.
    """
    spec._check()
    rng = child_rng(spec.seed, "two-distance")
    n = spec.points_per_cluster
    gaps = (
        TWO_DIST_GAP_SMALL if spec.gap_small is None else spec.gap_small,
        TWO_DIST_GAP_LARGE if spec.gap_large is None else spec.gap_large,
    )
    w = TWO_DIST_BOX
    parts, labels = [], []
    for cx, gap in zip(TWO_DIST_CENTERS, gaps):
        depth = min(2 * w, 0.8 * gap)  # shallow boxes keep distances near the gap
        for cls, sign in ((0, -1.0), (1, 1.0)):
            x = cx + rng.uniform(-w, w, size=n)
            y = sign * (gap / 2 + rng.uniform(0.0, depth, size=n))
            x[0], y[0] = cx, sign * gap / 2  # anchor on the inner edge
            parts.append(np.column_stack([x, y]))
            labels.append(np.full(n, cls))
    return LabeledSet(np.vstack(parts), np.concatenate(labels), class_count=2)


def gen_gauss1d(spec: SynthSpec) -> LabeledSet:
    """1-D mixture of two Gaussians; label 0 is the left component (mu1).

    Internally labels are {0, 1}; they stand for the -1/+1 convention of
    the scalar boundary simulator (0 <-> -1, 1 <-> +1).
    """
    spec._check()
    rng = child_rng(spec.seed, "gauss1d")
    n = spec.points_per_cluster
    mu1 = -1.0 if spec.mu1 is None else spec.mu1
    mu2 = 1.0 if spec.mu2 is None else spec.mu2
    sigma = 0.1 if spec.sigma is None else spec.sigma
    x1 = mu1 + sigma * rng.standard_normal(n)
    x2 = mu2 + sigma * rng.standard_normal(n)
    samples = np.concatenate([x1, x2])[:, None]
    labels = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    return LabeledSet(samples, labels, class_count=2)


# ---------------------------------------------------------------------------
# IDX ingestion (big-endian; published MNIST-family layout)
# ---------------------------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_u32s(blob: bytes, offset: int, count: int, path) -> tuple:
    end = offset + 4 * count
    if end > len(blob):
        raise IdxParseError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(f">{count}I", blob, offset)


def load_idx(images_path, labels_path, subsample: float | None = None, seed: int = 0) -> LabeledSet:
    """Parse an IDX image/label file pair into a flattened [0,1] dataset.

    Pixels are scaled from u8 to [0, 1] and images flattened to rows*cols
    features. `subsample` keeps that fraction of the samples, drawn
    without replacement using `seed`; 1.0 (or None) keeps everything in
    file order.
    """
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    (magic,) = _read_u32s(img_blob, 0, 1, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxParseError(f"{images_path}: bad image magic 0x{magic:08x} at offset 0")
    n_img, rows, cols = _read_u32s(img_blob, 4, 3, images_path)
    pixel_count = n_img * rows * cols
    if len(img_blob) != 16 + pixel_count:
        raise IdxParseError(
            f"{images_path}: expected {16 + pixel_count} bytes for {n_img} images of "
            f"{rows}x{cols}, file has {len(img_blob)} (offset 16)"
        )
    images = np.frombuffer(img_blob, dtype=np.uint8, count=pixel_count, offset=16)
    images = images.reshape(n_img, rows * cols).astype(float) / 255.0

    with open(labels_path, "rb") as fh:
        lbl_blob = fh.read()
    (magic,) = _read_u32s(lbl_blob, 0, 1, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise IdxParseError(f"{labels_path}: bad label magic 0x{magic:08x} at offset 0")
    (n_lbl,) = _read_u32s(lbl_blob, 4, 1, labels_path)
    if len(lbl_blob) != 8 + n_lbl:
        raise IdxParseError(
            f"{labels_path}: expected {8 + n_lbl} bytes for {n_lbl} labels, "
            f"file has {len(lbl_blob)} (offset 8)"
        )
    if n_lbl != n_img:
        raise IdxParseError(
            f"label count {n_lbl} in {labels_path} does not match image count {n_img} in {images_path}"
        )
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(int)

    if subsample is not None and subsample != 1.0:
        if not 0.0 < subsample <= 1.0:
            raise ValueError(f"subsample must be in (0, 1], got {subsample}")
        keep = max(1, int(round(subsample * n_img)))
        idx = np.sort(child_rng(seed, "idx-subsample").choice(n_img, size=keep, replace=False))
        images, labels = images[idx], labels[idx]
    return LabeledSet(images, labels, class_count=int(labels.max()) + 1)


# ---------------------------------------------------------------------------
# Nearest-opposite-class distances
# ---------------------------------------------------------------------------


def opposite_class_distances(data: LabeledSet) -> np.ndarray:
    """d_i = Euclidean distance from sample i to its nearest opposite-class sample."""
    if len(np.unique(data.labels)) < 2:
        raise ValueError("need at least two classes to measure opposite-class distances")
    x = data.samples
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    same = data.labels[:, None] == data.labels[None, :]
    d2[same] = np.inf
    return np.sqrt(d2.min(axis=1))


def opposite_class_histogram(data: LabeledSet, bins: int = 30):
    """Histogram of nearest-opposite-class distances.

    Returns (bin_edges, counts, distances); distances come back raw so
    callers can recompute statistics.
    """
    distances = opposite_class_distances(data)
    counts, edges = np.histogram(distances, bins=bins)
    return edges, counts, distances
