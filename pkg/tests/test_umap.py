import math

import numpy as np
import pytest

import featlens as fl
from featlens.embed import UmapParams, calibrate_graph, fuzzy_graph, optimize_layout
from featlens.neighbors import knn_exact

# root of 1 + t + t^2 = log2(3) with t = exp(-1/sigma); verified against brentq
SIGMA_123_ORACLE = 1.1331928143895706

# independent grid + Nelder-Mead least squares on the 300-point target grid
FIT_AB_ORACLE = (1.57694361, 0.89506072)


def test_smooth_knn_hand_case():
    rho, sigma = fl.smooth_knn([1.0, 2.0, 3.0])
    assert rho == 1.0
    assert abs(sigma - SIGMA_123_ORACLE) < 1e-3


def test_smooth_knn_sum_hits_target():
    rng = np.random.default_rng(0)
    for _ in range(50):
        row = np.sort(rng.uniform(0.1, 5.0, size=15))
        rho, sigma = fl.smooth_knn(row)
        total = np.exp(-np.maximum(0.0, row - rho) / sigma).sum()
        if sigma > 1e-3 * row.mean() + 1e-12:  # unclamped
            assert abs(total - math.log2(len(row))) < 1e-5


def test_smooth_knn_all_equal_hits_clamp():
    row = np.full(8, 2.5)
    rho, sigma = fl.smooth_knn(row)
    assert rho == 2.5
    assert sigma == pytest.approx(1e-3 * 2.5)
    # every weight is exp(0) = 1 regardless of sigma
    assert np.allclose(np.exp(-np.maximum(0.0, row - rho) / sigma), 1.0)


def test_smooth_knn_extreme_gap():
    row = np.array([1.0, 1e9])
    rho, sigma = fl.smooth_knn(row)
    assert rho == 1.0
    total = np.exp(-np.maximum(0.0, row - rho) / sigma).sum()
    assert abs(total - 1.0) < 1e-5  # log2(2); far weight ~ 0


def test_smooth_knn_all_zero():
    rho, sigma = fl.smooth_knn([0.0, 0.0, 0.0])
    assert rho == 0.0
    assert sigma > 0.0


def test_smooth_knn_input_validation():
    with pytest.raises(ValueError):
        fl.smooth_knn([1.0])
    with pytest.raises(ValueError):
        fl.smooth_knn([2.0, 1.0])
    with pytest.raises(ValueError):
        fl.smooth_knn([1.0, np.nan])


def test_fuzzy_union_arithmetic():
    # union(1, 0) = 1 and union(0.5, 0.5) = 0.75, via a crafted 3-point graph
    w = lambda a, b: a + b - a * b
    assert w(1.0, 0.0) == 1.0
    assert w(0.5, 0.5) == 0.75
    assert w(0.3, 0.7) == w(0.7, 0.3)


def test_fuzzy_graph_nearest_neighbor_weight_one():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(40, 5)).astype(np.float32)
    g = knn_exact(m, 6)
    fg = fuzzy_graph(g)
    weight = {}
    for i, j, val in zip(fg.heads, fg.tails, fg.weights):
        weight[(int(i), int(j))] = val
    assert np.all(fg.weights > 0) and np.all(fg.weights <= 1.0)
    for i in range(40):
        nn = int(g.indices[i, 0])
        key = (min(i, nn), max(i, nn))
        # directed weight to the nearest neighbor is 1, so the union is 1
        assert weight[key] == pytest.approx(1.0)


def test_fuzzy_graph_no_self_edges_single_entry_per_pair():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(30, 4)).astype(np.float32)
    fg = fuzzy_graph(knn_exact(m, 5))
    pairs = list(zip(fg.heads.tolist(), fg.tails.tolist()))
    assert all(i < j for i, j in pairs)
    assert len(pairs) == len(set(pairs))


def test_calibrate_graph_matches_row_op():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(25, 6)).astype(np.float32)
    g = knn_exact(m, 7)
    rhos, sigmas = calibrate_graph(g)
    for i in (0, 10, 24):
        rho, sigma = fl.smooth_knn(g.distances[i])
        assert rhos[i] == pytest.approx(rho)
        assert sigmas[i] == pytest.approx(sigma)


def test_fit_ab_against_oracle():
    a, b = fl.fit_ab(0.1, 1.0)
    assert 1.50 <= a <= 1.65
    assert 0.85 <= b <= 0.95
    assert abs(a - FIT_AB_ORACLE[0]) < 1e-3
    assert abs(b - FIT_AB_ORACLE[1]) < 1e-3


def test_fit_ab_phi_properties():
    a, b = fl.fit_ab(0.25, 1.0)
    d = np.linspace(0, 5, 200)
    phi = 1.0 / (1.0 + a * d ** (2 * b))
    assert phi[0] == 1.0
    assert np.all(np.diff(phi) <= 0)


def test_fit_ab_invalid_range():
    with pytest.raises(ValueError):
        fl.fit_ab(-0.1, 1.0)
    with pytest.raises(ValueError):
        fl.fit_ab(1.0, 1.0)


def _tiny_graph(w=1.0):
    return fl.FuzzyGraph(
        n=2, heads=np.array([0]), tails=np.array([1]), weights=np.array([w])
    )


def test_layout_zero_epochs_returns_init():
    fg = _tiny_graph()
    p = UmapParams(n_epochs=0, seed=9)
    coords = optimize_layout(fg, p)
    rng = np.random.default_rng(9)
    np.testing.assert_array_equal(coords, rng.uniform(-10, 10, size=(2, 2)).astype(np.float32))


def test_layout_two_points_attract():
    # oracle: median distance of 100 seeded random point pairs in the init square
    rng = np.random.default_rng(1234)
    pairs = rng.uniform(-10, 10, size=(100, 2, 2))
    median_random = float(np.median(np.linalg.norm(pairs[:, 0] - pairs[:, 1], axis=1)))
    for seed in range(5):
        coords = optimize_layout(_tiny_graph(), UmapParams(seed=seed, n_epochs=500))
        dist = float(np.linalg.norm(coords[0] - coords[1]))
        assert dist < median_random, (seed, dist, median_random)


def test_layout_deterministic_bitwise():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(80, 6)).astype(np.float32)
    fg = fuzzy_graph(knn_exact(m, 8))
    p = UmapParams(n_neighbors=8, n_epochs=50, seed=21)
    a = optimize_layout(fg, p)
    b = optimize_layout(fg, p)
    np.testing.assert_array_equal(a, b)


def test_layout_empty_graph_warns_returns_init():
    fg = fl.FuzzyGraph(n=3, heads=np.array([], int), tails=np.array([], int), weights=np.array([]))
    with pytest.warns(UserWarning, match="empty fuzzy graph"):
        coords = optimize_layout(fg, UmapParams(seed=2))
    assert coords.shape == (3, 2)
    assert np.all(np.isfinite(coords))


def test_umap_rejects_small_n():
    rng = np.random.default_rng(5)
    m = fl.FeatureMatrix([f"s{i}" for i in range(10)], rng.normal(size=(10, 4)))
    with pytest.raises(ValueError, match="n_samples > n_neighbors"):
        fl.umap(m, UmapParams(n_neighbors=15))


def test_umap_deterministic_and_finite(blob_corpus):
    m, _ = blob_corpus
    small = m.take(range(300))
    p = UmapParams(n_neighbors=10, n_epochs=60, seed=3)
    e1 = fl.umap(small, p)
    e2 = fl.umap(small, p)
    np.testing.assert_array_equal(e1.coords, e2.coords)
    assert np.all(np.isfinite(e1.coords))
    assert e1.params["n_neighbors"] == 10 and e1.params["seed"] == 3


def test_umap_permutation_equivariance():
    rng = np.random.default_rng(6)
    m = fl.FeatureMatrix([f"s{i:03d}" for i in range(120)], rng.normal(size=(120, 8)))
    p = UmapParams(n_neighbors=8, n_epochs=40, seed=7)
    base = fl.umap(m, p)
    perm = rng.permutation(120)
    permuted = fl.FeatureMatrix([m.ids[i] for i in perm], m.values[perm])
    shuffled = fl.umap(permuted, p)
    back = {sample_id: row for sample_id, row in zip(shuffled.ids, shuffled.coords)}
    for sample_id, row in zip(base.ids, base.coords):
        np.testing.assert_array_equal(row, back[sample_id])


def test_umap_separates_blobs(blob_corpus):
    m, t = blob_corpus
    e = fl.umap(m, UmapParams(seed=5))
    sil = fl.silhouette(e.coords, t.values_for("class", m.ids))
    assert sil >= 0.5


def test_umap_epoch_default_rule():
    p = UmapParams()
    assert p.resolve_epochs(10_000) == 500
    assert p.resolve_epochs(10_001) == 200
    assert UmapParams(n_epochs=77).resolve_epochs(5) == 77


def test_params_validation():
    with pytest.raises(ValueError):
        UmapParams(n_neighbors=1)
    with pytest.raises(ValueError):
        UmapParams(min_dist=1.5, spread=1.0)
    with pytest.raises(ValueError):
        UmapParams(metric="manhattan")
