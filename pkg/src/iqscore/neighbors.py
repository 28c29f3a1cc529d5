"""Exact cosine top-k retrieval and neighbor-consistency statistics.

The exact path computes similarities in query-block x candidate-block
tiles (float64 accumulation over float32 inputs) with a running top-k
merge per query row. Candidate blocks are processed in ascending index
order and BLAS is pinned to one thread inside the tile loop, so the
result is bit-identical for any worker count. Ties are broken by
ascending neighbor index everywhere.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import EmbeddingSet
from .errors import EmptyPool, EmptyVector, LengthMismatch, NotNormalized

QUERY_BLOCK_ROWS = 512
CANDIDATE_BLOCK_ROWS = 8192


def resolve_threads(threads: int | None) -> int:
    """Explicit argument, else IQSCORE_THREADS, else the CPU count."""
    if threads is None:
        env = os.environ.get("IQSCORE_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


@dataclass(frozen=True)
class NeighborTable:
    """Top-k cosine neighbors per row, self excluded.

    Each row of ``indices`` is sorted by descending similarity with ties
    broken by ascending index; ``k`` records the neighborhood size after
    clamping to n - 1.
    """

    k: int
    indices: np.ndarray
    similarities: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        sim = np.asarray(self.similarities)
        if idx.shape != sim.shape or idx.ndim != 2 or idx.shape[1] != self.k:
            raise ValueError("indices and similarities must both be (n, k)")
        if np.any(idx == np.arange(idx.shape[0])[:, None]):
            raise ValueError("a row may not list itself as a neighbor")

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    def to_csv(self, path) -> None:
        """Debug export: one line per (row, rank, neighbor, similarity)."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["row", "rank", "neighbor", "similarity"])
            for i in range(self.n):
                for r in range(self.k):
                    w.writerow([i, r, int(self.indices[i, r]),
                                repr(float(self.similarities[i, r]))])


def _check_pool(embeddings: EmbeddingSet, k: int) -> int:
    if not embeddings.unit_normalized:
        raise NotNormalized("cosine top-k requires unit-normalized embeddings")
    if embeddings.n < 2:
        raise EmptyPool("need at least 2 rows to retrieve neighbors")
    if k < 1:
        raise ValueError("k must be >= 1")
    return min(k, embeddings.n - 1)


def _merge_topk_block(data64: np.ndarray, qs: int, qe: int, k: int,
                      idx_out: np.ndarray, sim_out: np.ndarray) -> None:
    """Fill output rows [qs, qe) by scanning candidate blocks in order."""
    n = data64.shape[0]
    b = qe - qs
    best_sim = np.full((b, k), -np.inf)
    best_idx = np.full((b, k), n, dtype=np.int64)
    queries = data64[qs:qe]
    for cs in range(0, n, CANDIDATE_BLOCK_ROWS):
        ce = min(cs + CANDIDATE_BLOCK_ROWS, n)
        tile = queries @ data64[cs:ce].T
        lo, hi = max(qs, cs), min(qe, ce)
        if lo < hi:  # exclude self-matches where the ranges overlap
            g = np.arange(lo, hi)
            tile[g - qs, g - cs] = -np.inf
        c = ce - cs
        if c > k:
            # keep every candidate tied with the block's k-th largest value
            thresh = np.partition(tile, c - k, axis=1)[:, c - k]
        else:
            thresh = np.full(b, -np.inf)
        for r in range(b):
            cols = np.flatnonzero(tile[r] >= thresh[r])
            cand_sim = np.concatenate([best_sim[r], tile[r, cols]])
            cand_idx = np.concatenate([best_idx[r], cols + cs])
            order = np.lexsort((cand_idx, -cand_sim))[:k]
            best_sim[r] = cand_sim[order]
            best_idx[r] = cand_idx[order]
    idx_out[qs:qe] = best_idx
    sim_out[qs:qe] = best_sim


def exact_topk_cosine(embeddings: EmbeddingSet, k: int,
                      threads: int | None = None) -> NeighborTable:
    """Exact top-k cosine neighbors for every row, self excluded.

    k is clamped to n - 1 and the clamp recorded in the result. The
    output is bit-identical for any ``threads`` value: workers own
    disjoint query blocks and every tile is computed by an identical
    single-threaded BLAS call sequence.
    """
    k_used = _check_pool(embeddings, k)
    n = embeddings.n
    data64 = embeddings.data.astype(np.float64)
    idx_out = np.empty((n, k_used), dtype=np.int64)
    sim_out = np.empty((n, k_used), dtype=np.float64)
    blocks = [(s, min(s + QUERY_BLOCK_ROWS, n)) for s in range(0, n, QUERY_BLOCK_ROWS)]
    nthreads = resolve_threads(threads)
    with threadpool_limits(limits=1):
        if nthreads == 1 or len(blocks) == 1:
            for qs, qe in blocks:
                _merge_topk_block(data64, qs, qe, k_used, idx_out, sim_out)
        else:
            with ThreadPoolExecutor(max_workers=nthreads) as pool:
                futures = [pool.submit(_merge_topk_block, data64, qs, qe, k_used,
                                       idx_out, sim_out) for qs, qe in blocks]
                for fut in futures:
                    fut.result()
    return NeighborTable(k=k_used, indices=idx_out, similarities=sim_out)


def naive_topk_cosine(embeddings: EmbeddingSet, k: int) -> NeighborTable:
    """Brute-force O(n^2 d) oracle: full similarity row plus a full sort.

    Same contract as :func:`exact_topk_cosine`, no blocking, no running
    merge, no parallelism. Exists to cross-check the blocked path.
    """
    k_used = _check_pool(embeddings, k)
    n = embeddings.n
    data64 = embeddings.data.astype(np.float64)
    idx_out = np.empty((n, k_used), dtype=np.int64)
    sim_out = np.empty((n, k_used), dtype=np.float64)
    candidates = np.arange(n)
    for i in range(n):
        sims = data64 @ data64[i]
        sims[i] = -np.inf
        order = np.lexsort((candidates, -sims))[:k_used]
        idx_out[i] = order
        sim_out[i] = sims[order]
    return NeighborTable(k=k_used, indices=idx_out, similarities=sim_out)


def per_sample_agreement(table: NeighborTable, labels: np.ndarray,
                         ceiling_normalized: bool = False) -> np.ndarray:
    """Fraction of each row's neighbors that share its label.

    Raw mode divides the same-label count by k. Ceiling mode divides by
    min(k, n_y - 1) where n_y is the number of rows carrying the query's
    label, so a row whose identity has fewer than k + 1 members can still
    reach 1; rows with no same-label partner at all score 1 by convention.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != table.n:
        raise LengthMismatch(f"got {labels.shape[0] if labels.ndim == 1 else 'non-1-D'} labels "
                             f"for {table.n} rows")
    same = (labels[table.indices] == labels[:, None]).sum(axis=1).astype(np.float64)
    if not ceiling_normalized:
        return same / table.k
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    cap = np.minimum(table.k, counts[inverse] - 1).astype(np.float64)
    return np.where(cap > 0, same / np.maximum(cap, 1.0), 1.0)


def mean_consistency(agreement: np.ndarray) -> float:
    """Arithmetic mean of the agreement vector, float64 accumulation."""
    a = np.asarray(agreement, dtype=np.float64)
    if a.size == 0:
        raise EmptyVector("agreement vector is empty")
    return float(np.mean(a))


def agreement_histogram(agreement: np.ndarray, bins: int = 20
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Uniform histogram of agreement over [0, 1], last bin right-closed."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(np.asarray(agreement, dtype=np.float64),
                                 bins=bins, range=(0.0, 1.0))
    return edges, counts
