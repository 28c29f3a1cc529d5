import numpy as np
import pytest

from iqscore import EmbeddingSet, LabeledEmbeddingSet, l2_normalize_rows


def make_labeled(rows, labels, normalized=None):
    """Build a LabeledEmbeddingSet from python lists; normalize by default."""
    data = np.asarray(rows, dtype=np.float32)
    emb = EmbeddingSet(data)
    if normalized is None or normalized:
        emb = l2_normalize_rows(emb)
    return LabeledEmbeddingSet(emb, np.asarray(labels, dtype=np.int64))


def random_unit_set(n, d, seed, labels_of=None):
    """Random unit-normalized labeled set; labels cycle through labels_of."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n, d)).astype(np.float32)
    emb = l2_normalize_rows(EmbeddingSet(data))
    if labels_of is None:
        labels = np.arange(n, dtype=np.int64)
    else:
        labels = np.asarray([labels_of[i % len(labels_of)] for i in range(n)], dtype=np.int64)
    return LabeledEmbeddingSet(emb, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
