"""UMAP built from first principles: per-row distance calibration, fuzzy
graph construction, low-dimensional curve fitting, and a negative-sampling
SGD layout.

The pipeline is ``knn -> fuzzy_graph -> fit_ab -> optimize_layout``. Each
stage is exposed on its own so the calibration and layout behavior can be
tested against independent oracles. Randomness is keyed to the sample ids:
``umap`` internally reorders rows into id-sorted order before applying any
seeded draw, which makes the embedding equivariant to input row permutation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import curve_fit

from .data import EmbeddingResult, FeatureMatrix
from .neighbors import METRICS, KnnGraph, knn

SMOOTH_K_TOLERANCE = 1e-5
MIN_SIGMA_SCALE = 1e-3
GRAD_CLIP = 4.0


@dataclass(frozen=True)
class UmapParams:
    """Layout hyperparameters; defaults follow common UMAP practice.

    ``n_epochs=None`` resolves at run time to 500 for inputs up to 10,000
    rows and 200 above that.
    """

    n_neighbors: int = 15
    min_dist: float = 0.1
    spread: float = 1.0
    n_epochs: int | None = None
    negative_sample_rate: int = 5
    initial_lr: float = 1.0
    seed: int = 0
    metric: str = "euclidean"
    init: str = "random"
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.n_neighbors < 2:
            raise ValueError("n_neighbors must be >= 2")
        if not 0.0 <= self.min_dist < self.spread:
            raise ValueError(
                f"need 0 <= min_dist < spread, got min_dist={self.min_dist} spread={self.spread}"
            )
        if self.n_epochs is not None and self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.init != "random":
            raise ValueError(f"unsupported init {self.init!r}")

    def resolve_epochs(self, n: int) -> int:
        if self.n_epochs is not None:
            return self.n_epochs
        return 500 if n <= 10_000 else 200


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetrized fuzzy neighbor graph: undirected edges with weights in (0, 1]."""

    n: int
    heads: np.ndarray  # int64, head < tail per edge
    tails: np.ndarray
    weights: np.ndarray  # float64 in (0, 1]

    def __post_init__(self) -> None:
        heads = np.ascontiguousarray(self.heads, dtype=np.int64)
        tails = np.ascontiguousarray(self.tails, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        for arr in (heads, tails, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "weights", weights)
        if not (len(heads) == len(tails) == len(weights)):
            raise ValueError("edge arrays disagree in length")

    @property
    def n_edges(self) -> int:
        return len(self.weights)


@numba.njit(cache=True)
def _calibrate_row(distances, target):
    """rho and sigma for one ascending distance row.

    rho is the smallest positive distance. sigma solves
    sum_j exp(-max(0, d_j - rho) / sigma) = target by bisection (64 steps,
    1e-5 tolerance), then is clamped below by 1e-3 * mean(distances).
    """
    k = distances.shape[0]
    rho = 0.0
    for j in range(k):
        if distances[j] > 0.0:
            rho = distances[j]
            break

    lo = 0.0
    hi = np.inf
    mid = 1.0
    for _ in range(64):
        psum = 0.0
        for j in range(k):
            gap = distances[j] - rho
            if gap > 0.0:
                psum += math.exp(-gap / mid)
            else:
                psum += 1.0
        if abs(psum - target) < SMOOTH_K_TOLERANCE:
            break
        if psum > target:
            hi = mid
            mid = (lo + hi) / 2.0
        else:
            lo = mid
            if hi == np.inf:
                mid *= 2.0
            else:
                mid = (lo + hi) / 2.0

    floor = MIN_SIGMA_SCALE * distances.mean()
    sigma = mid if mid > floor else floor
    if sigma <= 0.0:
        sigma = MIN_SIGMA_SCALE
    return rho, sigma


def smooth_knn(distances_row) -> tuple[float, float]:
    """Calibrate one neighbor-distance row to the log2(k) mass target.

    Returns ``(rho, sigma)``: the local connectivity offset (smallest
    positive distance) and the bandwidth solving
    ``sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)``. With all distances
    zero the search degenerates and sigma sits at the clamp floor.
    """
    row = np.ascontiguousarray(distances_row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] < 2:
        raise ValueError("need a 1-D row of at least 2 distances")
    if np.any(~np.isfinite(row)) or np.any(row < 0):
        raise ValueError("distances must be finite and non-negative")
    if np.any(np.diff(row) < 0):
        raise ValueError("distances must be ascending")
    rho, sigma = _calibrate_row(row, math.log2(row.shape[0]))
    return float(rho), float(sigma)


@numba.njit(cache=True, parallel=True)
def _calibrate_all(distances, target):
    n = distances.shape[0]
    rhos = np.empty(n, dtype=np.float64)
    sigmas = np.empty(n, dtype=np.float64)
    for i in numba.prange(n):
        rho, sigma = _calibrate_row(distances[i], target)
        rhos[i] = rho
        sigmas[i] = sigma
    return rhos, sigmas


def calibrate_graph(g: KnnGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (rho, sigma) arrays for a whole kNN graph."""
    return _calibrate_all(g.distances, math.log2(g.k))


def fuzzy_graph(g: KnnGraph) -> FuzzyGraph:
    """Symmetrized fuzzy graph from calibrated neighbor distances.

    Directed weights are ``exp(-max(0, d - rho_i) / sigma_i)``; each point's
    nearest neighbor therefore always gets weight 1. Directions combine by
    probabilistic union ``w + w' - w * w'`` and zero-weight edges are
    dropped.
    """
    from scipy import sparse

    rhos, sigmas = calibrate_graph(g)
    n = g.n
    rows = np.repeat(np.arange(n, dtype=np.int64), g.k)
    cols = g.indices.ravel()
    gaps = np.maximum(0.0, g.distances - rhos[:, None])
    vals = np.exp(-gaps / sigmas[:, None]).ravel()
    directed = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    transpose = directed.T.tocsr()
    sym = directed + transpose - directed.multiply(transpose)
    upper = sparse.triu(sym.tocoo(), k=1).tocoo()
    keep = upper.data > 0.0
    return FuzzyGraph(
        n=n, heads=upper.row[keep], tails=upper.col[keep], weights=upper.data[keep]
    )


def fit_ab(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of the low-dimensional weight curve.

    Fits ``phi(d) = 1 / (1 + a * d^(2b))`` to the target that is 1 up to
    ``min_dist`` and decays as ``exp(-(d - min_dist) / spread)`` beyond it,
    over 300 evenly spaced points on [0, 3 * spread].
    """
    if not 0.0 <= min_dist < spread:
        raise ValueError(
            f"need 0 <= min_dist < spread, got min_dist={min_dist} spread={spread}"
        )
    xs = np.linspace(0.0, spread * 3.0, 300)
    ys = np.ones_like(xs)
    tail = xs >= min_dist
    ys[tail] = np.exp(-(xs[tail] - min_dist) / spread)

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(curve, xs, ys)
    if a <= 0 or b <= 0:
        raise RuntimeError(f"degenerate curve fit a={a} b={b}")
    return float(a), float(b)


@numba.njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> numba.uint64(33))) * numba.uint64(0xFF51AFD7ED558CCD)
    z &= numba.uint64(0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> numba.uint64(33))) * numba.uint64(0xC4CEB9FE1A85EC53)
    z &= numba.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> numba.uint64(33))


@numba.njit(inline="always")
def _negative_target(seed, epoch, edge, endpoint, draw, n):
    key = (
        numba.uint64(seed)
        ^ (numba.uint64(epoch) * numba.uint64(0x9E3779B97F4A7C15))
        ^ (numba.uint64(edge) * numba.uint64(0xC2B2AE3D27D4EB4F))
        ^ (numba.uint64(endpoint) * numba.uint64(0x165667B19E3779F9))
        ^ (numba.uint64(draw) * numba.uint64(0x27D4EB2F165667C5))
    )
    return numba.int64(_mix64(key) % numba.uint64(n))


@numba.njit(inline="always")
def _clip(v):
    if v > GRAD_CLIP:
        return GRAD_CLIP
    if v < -GRAD_CLIP:
        return -GRAD_CLIP
    return v


@numba.njit(inline="always", fastmath=True)
def _apply_edge(coords, i, j, a, b, alpha, neg_rate, seed, epoch, edge, n):
    # one pass per direction, mirroring the symmetric edge's two entries:
    # an attractive update moves both endpoints, then the head is pushed
    # away from neg_rate random points
    for endpoint in range(2):
        p = i if endpoint == 0 else j
        q = j if endpoint == 0 else i

        # attraction along the gradient of log(phi)
        dx = np.float64(coords[p, 0]) - np.float64(coords[q, 0])
        dy = np.float64(coords[p, 1]) - np.float64(coords[q, 1])
        d2 = dx * dx + dy * dy
        if d2 > 0.0:
            coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0)
            gx = _clip(coeff * dx)
            gy = _clip(coeff * dy)
            coords[p, 0] += alpha * gx
            coords[p, 1] += alpha * gy
            coords[q, 0] -= alpha * gx
            coords[q, 1] -= alpha * gy

        # repulsion along the gradient of log(1 - phi)
        for draw in range(neg_rate):
            l = _negative_target(seed, epoch, edge, endpoint, draw, n)
            if l == p:
                continue
            dx = np.float64(coords[p, 0]) - np.float64(coords[l, 0])
            dy = np.float64(coords[p, 1]) - np.float64(coords[l, 1])
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                coeff = (2.0 * b) / ((0.001 + d2) * (a * d2**b + 1.0))
                coords[p, 0] += alpha * _clip(coeff * dx)
                coords[p, 1] += alpha * _clip(coeff * dy)
            else:
                # coincident non-neighbor: push hard in a fixed direction
                coords[p, 0] += alpha * GRAD_CLIP
                coords[p, 1] += alpha * GRAD_CLIP


@numba.njit(cache=True)
def _layout_epoch_serial(
    coords, heads, tails, periods, a, b, alpha, neg_rate, seed, epoch, n
):
    for e in range(heads.shape[0]):
        if (epoch + 1) % periods[e] == 0:
            _apply_edge(
                coords, heads[e], tails[e], a, b, alpha, neg_rate, seed, epoch, e, n
            )


@numba.njit(cache=True, parallel=True)
def _layout_epoch_parallel(
    coords, heads, tails, periods, a, b, alpha, neg_rate, seed, epoch, n
):
    # unsynchronized coordinate updates: results vary run to run
    for e in numba.prange(heads.shape[0]):
        if (epoch + 1) % periods[e] == 0:
            _apply_edge(
                coords, heads[e], tails[e], a, b, alpha, neg_rate, seed, epoch, e, n
            )


def optimize_layout(fg: FuzzyGraph, p: UmapParams) -> np.ndarray:
    """Lay out a fuzzy graph in 2-D by negative-sampling SGD.

    Coordinates start uniform in [-10, 10]^2 (seeded). An edge of weight w
    fires every ``ceil(max_w / w)`` epochs; a firing applies one attractive
    update to both endpoints and ``negative_sample_rate`` repulsive updates
    per endpoint against random points. Per-coordinate gradients are clipped
    to [-4, 4] and the learning rate decays linearly to zero.
    """
    rng = np.random.default_rng(p.seed)
    coords = rng.uniform(-10.0, 10.0, size=(fg.n, 2)).astype(np.float32)
    n_epochs = p.resolve_epochs(fg.n)
    if fg.n_edges == 0:
        if fg.n > 0 and n_epochs > 0:
            warnings.warn("empty fuzzy graph: returning the random initialization")
        return coords
    if n_epochs == 0:
        return coords

    a, b = fit_ab(p.min_dist, p.spread)
    max_w = fg.weights.max()
    periods = np.ceil(max_w / fg.weights).astype(np.int64)
    epoch_fn = _layout_epoch_parallel if p.parallel else _layout_epoch_serial
    seed = np.uint64(p.seed)
    for epoch in range(n_epochs):
        alpha = p.initial_lr * (1.0 - epoch / n_epochs)
        epoch_fn(
            coords,
            fg.heads,
            fg.tails,
            periods,
            a,
            b,
            alpha,
            p.negative_sample_rate,
            seed,
            epoch,
            fg.n,
        )
    if not np.all(np.isfinite(coords)):
        raise RuntimeError("layout produced non-finite coordinates")
    return coords


def umap(m: FeatureMatrix, p: UmapParams = UmapParams(), source_tag: str = "") -> EmbeddingResult:
    """Embed a feature matrix in 2-D; records params and seed in the result.

    Rows are processed in id-sorted order so permuting the input rows only
    permutes the output rows. Requires ``n_samples > n_neighbors``.
    """
    if m.n_samples <= p.n_neighbors:
        raise ValueError(
            f"need n_samples > n_neighbors, got {m.n_samples} <= {p.n_neighbors}"
        )
    order = np.argsort(np.asarray(m.ids, dtype=object), kind="stable")
    values = m.values[order]
    graph = knn(values, p.n_neighbors, p.metric, seed=p.seed)
    fg = fuzzy_graph(graph)
    sorted_coords = optimize_layout(fg, p)
    coords = np.empty_like(sorted_coords)
    coords[order] = sorted_coords
    params = {
        "n_neighbors": p.n_neighbors,
        "min_dist": p.min_dist,
        "spread": p.spread,
        "n_epochs": p.resolve_epochs(m.n_samples),
        "negative_sample_rate": p.negative_sample_rate,
        "initial_lr": p.initial_lr,
        "seed": p.seed,
        "metric": p.metric,
        "init": p.init,
    }
    return EmbeddingResult(ids=m.ids, coords=coords, params=params, source_tag=source_tag)
