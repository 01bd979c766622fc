import time
import numpy as np
import numba
import featlens as fl
from featlens.embed import _apply_edge, fit_ab, fuzzy_graph
from featlens.neighbors import knn

# variant A: integer ceil periods (current)
# variant B: reference-style fractional accumulator scheduling

@numba.njit(cache=False)
def epoch_accum(coords, heads, tails, eps_edge, next_due, a, b, alpha, neg_rate, seed, epoch, n):
    for e in range(heads.shape[0]):
        if next_due[e] <= epoch:
            _apply_edge(coords, heads[e], tails[e], a, b, alpha, neg_rate, seed, epoch, e, n)
            next_due[e] += eps_edge[e]

def layout_accum(fg, p, n_epochs):
    rng = np.random.default_rng(p.seed)
    coords = rng.uniform(-10.0, 10.0, size=(fg.n, 2)).astype(np.float32)
    a, b = fit_ab(p.min_dist, p.spread)
    max_w = fg.weights.max()
    eps_edge = max_w / fg.weights          # epochs between firings (float)
    next_due = eps_edge.copy()
    seed = np.uint64(p.seed)
    for epoch in range(n_epochs):
        alpha = p.initial_lr * (1.0 - epoch / n_epochs)
        epoch_accum(coords, fg.heads, fg.tails, eps_edge, next_due, a, b, alpha,
                    p.negative_sample_rate, seed, epoch, fg.n)
    return coords

m, t = fl.gen_blobs(fl.BlobSpec(n_samples=2000, dim=50, n_classes=10, class_separation=5.0, seed=11))
labels = t.values_for('class', m.ids)
X = m.values.astype(np.float64)
p = fl.UmapParams(seed=5)
g = knn(m.values, 15, 'euclidean', seed=5)
fg = fuzzy_graph(g)
print('edges', fg.n_edges, 'weight quantiles', np.quantile(fg.weights, [0.1, 0.5, 0.9]))

coords = layout_accum(fg, p, 500)
print('accum: sil=%.3f knn=%.3f cpd=%.3f' % (
    fl.silhouette(coords, labels),
    fl.knn_preservation(X, coords, k=10),
    fl.cpd(X, coords, 100000, seed=1)))
