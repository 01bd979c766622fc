"""Synthetic feature corpora with known class structure and injectable
site-level batch effects.

These generators provide the ground truth that makes the pipeline testable:
class blobs with a controlled separation/spread ratio, and a per-site affine
disturbance (offset + scale) that mimics acquisition-site artifacts at the
feature level. Everything is pure and seeded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, LabelTable, MISSING

# feature width preset matching common SSL encoder output
DEFAULT_DIM = 1536


@dataclass(frozen=True)
class BlobSpec:
    n_samples: int
    dim: int = DEFAULT_DIM
    n_classes: int = 5
    class_separation: float = 10.0  # multiple of within_std between centers
    within_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.within_std <= 0:
            raise ValueError("within_std must be > 0")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")


@dataclass(frozen=True)
class BatchEffectSpec:
    n_sites: int
    offset_magnitude: float  # L2 norm of each site's offset vector
    scale_jitter: float = 0.0  # site scale factor is 1 +/- up to this much
    skew: float = 0.0  # 0 = uniform site assignment, 1 = site determined by class
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if self.offset_magnitude < 0:
            raise ValueError("offset_magnitude must be >= 0")
        if not 0.0 <= self.scale_jitter < 1.0:
            raise ValueError("scale_jitter must be in [0, 1)")
        if not 0.0 <= self.skew <= 1.0:
            raise ValueError("skew must be in [0, 1]")


def _blob_centers(rng, n_classes, dim, separation) -> np.ndarray:
    if n_classes == 1:
        return np.zeros((1, dim))
    if dim == 1:
        # random directions collide in 1-D; space centers on a line instead
        return (np.arange(n_classes, dtype=np.float64) * separation)[:, None]
    dirs = rng.normal(size=(n_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    diffs = dirs[:, None, :] - dirs[None, :, :]
    dists = np.sqrt((diffs * diffs).sum(axis=2))
    np.fill_diagonal(dists, np.inf)
    min_dist = dists.min()
    return dirs * (separation / min_dist)


def gen_blobs(spec: BlobSpec) -> tuple[FeatureMatrix, LabelTable]:
    """Gaussian class blobs with pairwise center distance >= separation * std.

    Classes are assigned round-robin, so counts are balanced to within one
    sample. Returns the features and a label table with a "class" column.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _blob_centers(
        rng, spec.n_classes, spec.dim, spec.class_separation * spec.within_std
    )
    codes = np.arange(spec.n_samples, dtype=np.int64) % spec.n_classes
    values = centers[codes] + rng.normal(
        0.0, spec.within_std, size=(spec.n_samples, spec.dim)
    )
    ids = [f"s{i:06d}" for i in range(spec.n_samples)]
    labels = [f"c{c}" for c in codes]
    return (
        FeatureMatrix(ids, values.astype(np.float32)),
        LabelTable(ids, {"class": labels}),
    )


def inject_batch_effect(
    m: FeatureMatrix, t: LabelTable, spec: BatchEffectSpec
) -> tuple[FeatureMatrix, LabelTable]:
    """Assign each sample a site and apply that site's affine disturbance.

    Each site owns a fixed offset (random direction, given L2 magnitude) and
    a scale factor ``1 + scale_jitter * u`` with ``u ~ U(-1, 1)``; samples
    become ``(x + offset) * scale``. With ``skew > 0`` a sample picks its
    class's preferred site with that probability (requires a "class" column),
    otherwise sites are uniform. Ids, class labels, and row order never
    change; zero magnitude and jitter return the features bitwise unchanged.
    """
    rng = np.random.default_rng(spec.seed)
    directions = rng.normal(size=(spec.n_sites, m.dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    offsets = directions / norms * spec.offset_magnitude
    scales = 1.0 + spec.scale_jitter * rng.uniform(-1.0, 1.0, size=spec.n_sites)

    n = m.n_samples
    sites = rng.integers(0, spec.n_sites, size=n)
    if spec.skew > 0.0:
        if not t.has_column("class"):
            raise ValueError("skewed site assignment needs a 'class' column")
        class_values = t.values_for("class", m.ids)
        cats = sorted(set(class_values))
        preferred = np.array(
            [cats.index(v) % spec.n_sites for v in class_values], dtype=np.int64
        )
        use_preferred = rng.uniform(size=n) < spec.skew
        sites = np.where(use_preferred, preferred, sites)

    if spec.offset_magnitude == 0.0 and spec.scale_jitter == 0.0:
        shifted = m
    else:
        values = (m.values.astype(np.float64) + offsets[sites]) * scales[sites, None]
        shifted = FeatureMatrix(m.ids, values.astype(np.float32))

    site_labels = [f"site{int(s)}" for s in sites]
    # the table may cover more ids than the matrix; align by id
    table_sites = {sample_id: lab for sample_id, lab in zip(m.ids, site_labels)}
    column = [table_sites.get(sample_id, MISSING) for sample_id in t.ids]
    return shifted, t.with_column("site", column)
