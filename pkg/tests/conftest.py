import numpy as np
import pytest

import featlens as fl


@pytest.fixture(scope="session")
def blob_corpus():
    """Shared 10-blob corpus in 50-D, the standard embedding benchmark shape."""
    return fl.gen_blobs(
        fl.BlobSpec(n_samples=2000, dim=50, n_classes=10, class_separation=5.0, seed=11)
    )


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the numba kernels on tiny inputs so timed tests measure compute."""
    m, _ = fl.gen_blobs(fl.BlobSpec(n_samples=60, dim=8, n_classes=3, seed=0))
    fl.knn_descent(m, 5, seed=0)
    fl.umap(m, fl.UmapParams(n_neighbors=5, n_epochs=5, seed=0))
    return True


def make_split(ids, seed=0, ratios=(0.7, 0.15, 0.15)):
    """Plain per-sample split over explicit ids."""
    table = fl.LabelTable(ids, {"any": ["x"] * len(ids)})
    return fl.group_stratified_split(table, ratios, None, seed=seed)


def rng_array(seed, shape):
    return np.random.default_rng(seed).normal(size=shape)
