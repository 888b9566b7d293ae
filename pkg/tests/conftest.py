import numpy as np
import pytest

from condra import Corpus, build_ball_tree, build_cond_index


def make_labeled_corpus(n=500, d=6, n_labels=8, seed=0, metric="euclidean", clustered=False):
    rng = np.random.default_rng(seed)
    if clustered:
        centers = rng.standard_normal((n_labels, d)) * 6.0
        codes = rng.integers(0, n_labels, size=n)
        pts = centers[codes] + rng.standard_normal((n, d))
    else:
        codes = rng.integers(0, n_labels, size=n)
        pts = rng.standard_normal((n, d))
    labels = np.array([f"L{c}" for c in codes])
    parity = np.array(["even" if c % 2 == 0 else "odd" for c in codes])
    return Corpus(pts.astype(np.float32), {"label": labels, "parity": parity}, metric=metric)


@pytest.fixture(scope="session")
def small_corpus():
    return make_labeled_corpus(n=300, d=4, n_labels=6, seed=11)


@pytest.fixture(scope="session")
def small_tree(small_corpus):
    return build_ball_tree(small_corpus, leaf_size=8)


@pytest.fixture(scope="session")
def small_index(small_tree, small_corpus):
    return build_cond_index(small_tree, small_corpus)
