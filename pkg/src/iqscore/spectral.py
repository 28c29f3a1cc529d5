"""Covariance spectrum, entropy-based effective rank, and diagnostics.

Covariance accumulates over fixed-order row blocks with BLAS pinned to a
single thread, so spectral results are bit-stable regardless of how many
workers the rest of the pipeline uses. The eigen-spectrum of the d x d
covariance equals (up to trailing zeros) that of the n x n Gram matrix
of the centered rows; the Gram route is used automatically when n < d.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import EmbeddingSet, SpectrumSummary
from .errors import AllZeroSpectrum, ConvergenceFailure, DegenerateCap, EmptyPool

log = logging.getLogger(__name__)

COV_BLOCK_ROWS = 4096
EIGENVALUE_CLIP_REL = 1e-12
CEV_THRESHOLDS = (0.90, 0.95, 0.99)


@dataclass(frozen=True)
class CenteredMatrix:
    """Row-centered embedding matrix in float64, plus the mean removed."""

    data: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True)
class CovarianceMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("covariance must be square")
        if np.abs(m - m.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric within 1e-9")
        if m.shape[0] and float(np.diagonal(m).min()) < -1e-9:
            raise ValueError("covariance diagonal must be >= -1e-9")


def center_rows(embeddings: EmbeddingSet) -> CenteredMatrix:
    """Subtract the arithmetic row mean from every row (float64)."""
    data64 = embeddings.data.astype(np.float64)
    mean = data64.mean(axis=0)
    return CenteredMatrix(data64 - mean, mean)


def covariance(centered: CenteredMatrix) -> CovarianceMatrix:
    """C = (1/n) X^T X over the centered rows, symmetrized after accumulation.

    The 1/n normalization (not 1/(n-1)) is deliberate; entropy-based
    effective rank is invariant to it anyway since it uniformly scales
    the spectrum.
    """
    x = centered.data
    n, d = x.shape
    acc = np.zeros((d, d))
    with threadpool_limits(limits=1):
        for s in range(0, n, COV_BLOCK_ROWS):
            b = x[s: s + COV_BLOCK_ROWS]
            acc += b.T @ b
    c = acc / n
    return CovarianceMatrix((c + c.T) / 2.0)


def _gram(centered: CenteredMatrix) -> np.ndarray:
    x = centered.data
    n = x.shape[0]
    with threadpool_limits(limits=1):
        g = x @ x.T
    g = (g + g.T) / (2.0 * n)
    return g


def sym_eigenvalues(matrix: np.ndarray, validate: bool = False) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, descending, clipped at zero.

    Values below 1e-12 * lambda_max (including round-off negatives) are
    set to exactly 0. With ``validate=True`` eigenvectors are computed too
    and each pair is checked against ||Cv - lambda v|| <= 1e-6 (1 + |lambda|).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ValueError("matrix must be finite")
    try:
        with threadpool_limits(limits=1):
            if validate:
                w, v = np.linalg.eigh(m)
            else:
                w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(f"eigendecomposition failed: {e}") from e
    if validate:
        resid = np.linalg.norm(m @ v - v * w, axis=0)
        bad = resid > 1e-6 * (1.0 + np.abs(w))
        if bad.any():
            raise ConvergenceFailure(
                f"eigenpair residual {resid[bad].max():.3g} exceeds tolerance")
    w = w[::-1].copy()
    lam_max = float(w[0]) if w.size else 0.0
    clip = EIGENVALUE_CLIP_REL * max(lam_max, 0.0)
    if w.size and float(w[-1]) < -clip:
        raise ConvergenceFailure(
            f"eigenvalue {w[-1]:.3g} below -{clip:.3g}; input looks non-PSD")
    w[w < clip] = 0.0
    return w


def embedding_spectrum(embeddings: EmbeddingSet, method: str = "auto") -> np.ndarray:
    """Eigenvalues (length d, descending) of the centered covariance.

    ``method`` selects the d x d covariance route or the n x n Gram route;
    ``auto`` picks Gram when n < d. Both routes agree on the nonzero
    spectrum to within round-off.
    """
    if method not in ("auto", "covariance", "gram"):
        raise ValueError(f"unknown spectrum method {method!r}")
    centered = center_rows(embeddings)
    n, d = centered.data.shape
    use_gram = method == "gram" or (method == "auto" and n < d)
    if use_gram:
        w = sym_eigenvalues(_gram(centered))
        if n < d:
            w = np.concatenate([w, np.zeros(d - n)])
        else:
            w = w[:d]
        return w
    return sym_eigenvalues(covariance(centered).matrix)


def effective_rank(eigenvalues: np.ndarray) -> float:
    """exp of the Shannon entropy of the normalized spectrum (natural log)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size == 0 or float(lam.min()) < 0:
        raise ValueError("eigenvalues must be nonempty and non-negative")
    total = float(lam.sum())
    if total <= 0.0:
        raise AllZeroSpectrum("all eigenvalues are zero")
    p = lam / total
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def normalized_effective_rank(r_ent: float, n: int, d: int) -> float:
    """log(r_ent) / log(Q) with Q = min(n, d), clamped to [0, 1]."""
    q = min(int(n), int(d))
    if q < 2:
        raise DegenerateCap(f"Q = min(n, d) = {q} leaves log Q = 0")
    if not (r_ent > 0 and math.isfinite(r_ent)):
        raise ValueError(f"r_ent must be positive and finite, got {r_ent}")
    value = math.log(r_ent) / math.log(q)
    if value < 0.0 or value > 1.0:
        log.warning("normalized effective rank %.6g clamped into [0, 1]", value)
        value = min(max(value, 0.0), 1.0)
    return value


def rankme_score(embeddings: EmbeddingSet, epsilon: float = 1e-7) -> float:
    """Singular-value entropy score of the uncentered embedding matrix.

    p_k = sigma_k / sum(sigma) + epsilon, score = exp(-sum p_k log p_k).
    The epsilon floor keeps the score finite when trailing singular
    values vanish; pass 0 to disable it.
    """
    if embeddings.n < 2:
        raise EmptyPool("rankme needs at least 2 rows")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    with threadpool_limits(limits=1):
        sigma = np.linalg.svd(embeddings.data.astype(np.float64), compute_uv=False)
    total = float(sigma.sum())
    if total <= 0.0:
        raise AllZeroSpectrum("all singular values are zero")
    p = sigma / total + epsilon
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def cumulative_explained_variance(eigenvalues: np.ndarray
                                  ) -> tuple[np.ndarray, dict[float, int]]:
    """Running normalized partial sums, plus components-to-threshold counts."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = float(lam.sum())
    if lam.size == 0 or total <= 0.0:
        raise AllZeroSpectrum("all eigenvalues are zero")
    cev = np.cumsum(lam) / total
    counts = {t: int(np.searchsorted(cev, t) + 1) for t in CEV_THRESHOLDS}
    return cev, counts


def log_spectrum(eigenvalues: np.ndarray, floor: float = 1e-15) -> np.ndarray:
    """Natural log of the spectrum with a floor, for plot emission."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return np.log(np.maximum(lam, floor))


def summarize_spectrum(eigenvalues: np.ndarray, n: int, d: int) -> SpectrumSummary:
    """Package a spectrum into the summary used in reports."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = float(lam.sum())
    if total <= 0.0:
        raise AllZeroSpectrum("all eigenvalues are zero")
    r_ent = effective_rank(lam)
    r_norm = normalized_effective_rank(r_ent, n, d)
    cev, counts = cumulative_explained_variance(lam)
    return SpectrumSummary(
        eigenvalues=lam,
        weights_p=lam / total,
        r_ent=r_ent,
        r_norm=r_norm,
        q_cap=min(int(n), int(d)),
        cev=cev,
        components_to_cev=counts,
    )


def spectrum_to_csv(values: np.ndarray, path, header: str = "value") -> None:
    """Two-column (index, value) CSV for external plotting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", header])
        for i, v in enumerate(np.asarray(values, dtype=np.float64)):
            w.writerow([i, repr(float(v))])
