"""Embedding quality metrics: silhouette, kNN preservation, and Spearman
correlation of pairwise distances (CPD).

Silhouette scores cluster cohesion vs separation in [-1, 1]; kNN
preservation measures how much local structure survives the projection;
CPD measures global structure as the rank correlation between
high-dimensional and low-dimensional pairwise distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .neighbors import knn_exact, pairwise_distances


@dataclass(frozen=True)
class MetricReport:
    """Metric values with the parameters that produced them."""

    silhouette: dict = field(default_factory=dict)  # label column -> value
    knn_preservation: float | None = None
    knn_k: int | None = None
    cpd: float | None = None
    cpd_pairs: int | None = None
    cpd_seed: int | None = None


def silhouette(points, labels, metric: str = "euclidean") -> float:
    """Mean silhouette score of a labelled point set.

    Per point, ``s = (b - a) / max(a, b)`` with ``a`` the mean distance to
    the point's own cluster (self excluded) and ``b`` the smallest mean
    distance to any other cluster. Points in singleton clusters contribute 0.
    Requires at least two non-empty clusters and three points.
    """
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=object)
    n = pts.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if labels.shape[0] != n:
        raise ValueError(f"{n} points but {labels.shape[0]} labels")
    cats, codes = np.unique(labels, return_inverse=True)
    if len(cats) < 2:
        raise ValueError("need at least 2 clusters")
    cluster_sizes = np.bincount(codes, minlength=len(cats))

    scores = np.zeros(n, dtype=np.float64)
    block = max(1, min(n, int(2**24 // max(n, 1))))
    for start in range(0, n, block):
        stop = min(start + block, n)
        dist = pairwise_distances(pts[start:stop], pts, metric)
        # per-cluster distance sums for every point in the block
        sums = np.zeros((stop - start, len(cats)), dtype=np.float64)
        for c in range(len(cats)):
            sums[:, c] = dist[:, codes == c].sum(axis=1)
        for bi, i in enumerate(range(start, stop)):
            own = codes[i]
            if cluster_sizes[own] <= 1:
                continue  # singleton: s = 0
            a = sums[bi, own] / (cluster_sizes[own] - 1)
            b = np.inf
            for c in range(len(cats)):
                if c == own or cluster_sizes[c] == 0:
                    continue
                b = min(b, sums[bi, c] / cluster_sizes[c])
            denom = max(a, b)
            scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def knn_preservation(high, low, k: int = 10, metric: str = "euclidean") -> float:
    """Fraction of exact high-dimensional neighbors kept in the low space.

    Both neighbor sets are computed exactly. Symmetric in its two arguments
    and invariant under positive uniform scaling of either space.
    """
    high_values = getattr(high, "values", high)
    low_values = getattr(low, "values", low)
    high_values = np.asarray(high_values)
    low_values = np.asarray(low_values)
    if high_values.shape[0] != low_values.shape[0]:
        raise ValueError(
            f"row mismatch: {high_values.shape[0]} vs {low_values.shape[0]}"
        )
    g_high = knn_exact(high_values, k, metric)
    g_low = knn_exact(low_values, k, metric)
    hits = 0
    for row_h, row_l in zip(g_high.indices, g_low.indices):
        hits += np.intersect1d(row_h, row_l, assume_unique=True).size
    return hits / g_high.indices.size


def sample_pairs(n: int, n_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct unordered index pairs, all of them when few enough exist."""
    total = n * (n - 1) // 2
    if n_pairs >= total:
        i, j = np.triu_indices(n, k=1)
        return i.astype(np.int64), j.astype(np.int64)
    rng = np.random.default_rng(seed)
    if total <= 4 * n_pairs or total < 2**22:
        flat = rng.choice(total, size=n_pairs, replace=False)
    else:
        # rejection sampling: collision probability is tiny at this density
        chosen: set[int] = set()
        while len(chosen) < n_pairs:
            draw = rng.integers(0, total, size=n_pairs - len(chosen))
            chosen.update(int(v) for v in draw)
        flat = np.fromiter(chosen, dtype=np.int64, count=n_pairs)
        flat.sort()
    # decode upper-triangle linear index -> (i, j), i < j
    i = (n - 2 - np.floor(
        np.sqrt(-8.0 * flat + 4.0 * n * (n - 1) - 7.0) / 2.0 - 0.5
    )).astype(np.int64)
    j = (flat + i + 1 - (i * (2 * n - i - 1)) // 2).astype(np.int64)
    return i, j


def cpd(
    high,
    low,
    n_pairs: int = 100_000,
    seed: int = 0,
    metric: str = "euclidean",
) -> float:
    """Spearman correlation of pairwise distances between the two spaces.

    Samples ``n_pairs`` distinct unordered pairs (all pairs when fewer
    exist), measures each pair's distance in both spaces, and rank-correlates
    the two lists.
    """
    high_values = np.asarray(getattr(high, "values", high), dtype=np.float64)
    low_values = np.asarray(getattr(low, "values", low), dtype=np.float64)
    n = high_values.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    if low_values.shape[0] != n:
        raise ValueError(f"row mismatch: {n} vs {low_values.shape[0]}")
    i, j = sample_pairs(n, n_pairs, seed)
    high_d = _pair_distances(high_values, i, j, metric)
    low_d = _pair_distances(low_values, i, j, metric)
    rho, _ = spearman(high_d, low_d)
    return rho


def _pair_distances(values, i, j, metric):
    if metric == "euclidean":
        diff = values[i] - values[j]
        return np.sqrt((diff * diff).sum(axis=1))
    if metric == "cosine":
        norms = np.linalg.norm(values, axis=1)
        norms[norms == 0.0] = 1.0
        unit = values / norms[:, None]
        sim = (unit[i] * unit[j]).sum(axis=1)
        return np.maximum(1.0 - sim, 0.0)
    raise ValueError(f"unknown metric {metric!r}")


def spearman(xs, ys) -> tuple[float, bool]:
    """Spearman rank correlation with average ranks for ties.

    Returns ``(rho, degenerate)``; a constant input has zero rank variance,
    which yields ``rho = 0`` with the degenerate flag set instead of NaN.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 values")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0, True
    rho = float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))
    return max(-1.0, min(1.0, rho)), False
