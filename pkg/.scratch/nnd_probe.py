import time
import numpy as np
import numba
import featlens as fl
from featlens.neighbors import _metric_dist, _heap_push, _reservoir_add, _rand_below

@numba.njit(cache=False)
def probe(values, norms, k, cosine, seed, max_iters, delta, pool):
    n = values.shape[0]
    heap_dist = np.full((n, k), np.inf, dtype=np.float64)
    heap_idx = np.full((n, k), -1, dtype=np.int64)
    heap_flag = np.zeros((n, k), dtype=np.uint8)
    state = numba.uint64(seed) ^ numba.uint64(0xA02B_DBF7_BB3C_0A7)
    for i in range(n):
        filled = 0
        while filled < k:
            state, j = _rand_below(state, n)
            if j == i:
                continue
            duplicate = False
            for s in range(k):
                if heap_idx[i, s] == j:
                    duplicate = True
                    break
            if duplicate:
                continue
            d = _metric_dist(values, norms, i, j, cosine)
            _heap_push(heap_dist, heap_idx, heap_flag, i, d, j, 1)
            _heap_push(heap_dist, heap_idx, heap_flag, j, d, i, 1)
            filled += 1
    new_cand = np.full((n, pool), -1, dtype=np.int64)
    old_cand = np.full((n, pool), -1, dtype=np.int64)
    new_fill = np.zeros(n, dtype=np.int64)
    old_fill = np.zeros(n, dtype=np.int64)
    counts = np.zeros(max_iters, dtype=np.int64)
    for iteration in range(max_iters):
        new_cand[:] = -1
        old_cand[:] = -1
        new_fill[:] = 0
        old_fill[:] = 0
        for i in range(n):
            for s in range(k):
                j = heap_idx[i, s]
                if j < 0:
                    continue
                if heap_flag[i, s] == 1:
                    state = _reservoir_add(new_cand, new_fill, i, j, state)
                    state = _reservoir_add(new_cand, new_fill, j, i, state)
                else:
                    state = _reservoir_add(old_cand, old_fill, i, j, state)
                    state = _reservoir_add(old_cand, old_fill, j, i, state)
        for i in range(n):
            for s in range(k):
                j = heap_idx[i, s]
                if j < 0 or heap_flag[i, s] == 0:
                    continue
                for c in range(min(new_fill[i], pool)):
                    if new_cand[i, c] == j:
                        heap_flag[i, s] = 0
                        break
        updates = 0
        for i in range(n):
            n_new = min(new_fill[i], pool)
            n_old = min(old_fill[i], pool)
            for a in range(n_new):
                p = new_cand[i, a]
                for b in range(a + 1, n_new):
                    q = new_cand[i, b]
                    if p == q:
                        continue
                    d = _metric_dist(values, norms, p, q, cosine)
                    updates += _heap_push(heap_dist, heap_idx, heap_flag, p, d, q, 1)
                    updates += _heap_push(heap_dist, heap_idx, heap_flag, q, d, p, 1)
                for b in range(n_old):
                    q = old_cand[i, b]
                    if p == q:
                        continue
                    d = _metric_dist(values, norms, p, q, cosine)
                    updates += _heap_push(heap_dist, heap_idx, heap_flag, p, d, q, 1)
                    updates += _heap_push(heap_dist, heap_idx, heap_flag, q, d, p, 1)
        counts[iteration] = updates
        if updates < delta * n * k:
            break
    return counts

m, t = fl.gen_blobs(fl.BlobSpec(n_samples=5000, dim=50, n_classes=10, class_separation=5.0, seed=7))
t0 = time.time()
c = probe(m.values, np.ones(1), 15, False, np.uint64(3), 10, 0.001, 60)
dt = time.time() - t0
print('compile+run', f'{dt:.1f}s', 'updates per iter', list(c))
