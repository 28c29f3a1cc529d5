"""End-to-end intrinsic-quality computation on a labeled embedding set.

One call runs: normalize -> subset (stratified sample, or whole-set dedup
when sampling is disabled) -> exact k-NN -> neighbor consistency ->
covariance spectrum -> rankme baseline -> fused score, and returns the
full run record. Per-stage wall-clock goes into ``timings_ms``, the only
report field excluded from the byte-determinism contract.
"""

from __future__ import annotations

import time

from .core import (
    ConsisSummary,
    IqReport,
    LabeledEmbeddingSet,
    content_fingerprint,
    l2_normalize_rows,
)
from .dataio import (
    DEFAULT_DEDUP_THRESHOLD,
    EMBEDDING_FORMAT_VERSION,
    LABEL_FORMAT_VERSION,
    SamplingConfig,
    dedup_within_identity,
    stratified_sample,
)
from .iqfuse import DEFAULT_ALPHA, DEFAULT_BETA, iq_score
from .neighbors import (
    agreement_histogram,
    exact_topk_cosine,
    mean_consistency,
    per_sample_agreement,
)
from .spectral import embedding_spectrum, rankme_score, summarize_spectrum

DEFAULT_K = 10
DEFAULT_BINS = 20
DEFAULT_RANKME_EPSILON = 1e-7


def compute_iq_report(labeled: LabeledEmbeddingSet, *,
                      k: int = DEFAULT_K,
                      alpha: float = DEFAULT_ALPHA,
                      beta: float = DEFAULT_BETA,
                      sampling: SamplingConfig | None = None,
                      dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
                      agreement_mode: str = "raw",
                      bins: int = DEFAULT_BINS,
                      rankme_epsilon: float = DEFAULT_RANKME_EPSILON,
                      spectrum_method: str = "auto",
                      threads: int | None = None) -> IqReport:
    """Compute the intrinsic-quality record for one labeled set.

    With ``sampling`` set, the identity-stratified subset (which dedups
    each pool before drawing) is analyzed; otherwise the whole set is
    analyzed after per-identity dedup at ``dedup_threshold``. The thread
    count never changes output bytes, only wall-clock.
    """
    if agreement_mode not in ("raw", "ceiling"):
        raise ValueError(f"unknown agreement mode {agreement_mode!r}")
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    if labeled.embeddings.unit_normalized:
        normalized = labeled
    else:
        normalized = LabeledEmbeddingSet(
            l2_normalize_rows(labeled.embeddings), labeled.labels,
            source_ids=labeled.source_ids, label_names=labeled.label_names)
    timings["normalize"] = _lap(t0)

    t = time.perf_counter()
    if sampling is not None:
        subset, _manifest = stratified_sample(normalized, sampling)
    else:
        subset, _records = dedup_within_identity(normalized, dedup_threshold)
    timings["subset"] = _lap(t)

    t = time.perf_counter()
    table = exact_topk_cosine(subset.embeddings, k, threads=threads)
    timings["knn"] = _lap(t)

    t = time.perf_counter()
    agreement = per_sample_agreement(table, subset.labels,
                                     ceiling_normalized=(agreement_mode == "ceiling"))
    cbar = mean_consistency(agreement)
    edges, counts = agreement_histogram(agreement, bins)
    consis = ConsisSummary(agreement, cbar, table.k, agreement_mode == "ceiling",
                           edges, counts)
    timings["consis"] = _lap(t)

    t = time.perf_counter()
    eigenvalues = embedding_spectrum(subset.embeddings, method=spectrum_method)
    spectrum = summarize_spectrum(eigenvalues, subset.n, subset.d)
    timings["spectrum"] = _lap(t)

    t = time.perf_counter()
    rankme = rankme_score(subset.embeddings, epsilon=rankme_epsilon)
    timings["rankme"] = _lap(t)

    iq = iq_score(cbar, spectrum.r_norm, alpha, beta)
    timings["total"] = _lap(t0)

    config = {
        "k": int(k),
        "alpha": float(alpha),
        "beta": float(beta),
        "agreement_mode": agreement_mode,
        "bins": int(bins),
        "rankme_epsilon": float(rankme_epsilon),
        "spectrum_method": spectrum_method,
        "sampling": sampling.to_dict() if sampling is not None else None,
        "dedup_threshold": float(dedup_threshold) if sampling is None else float(sampling.dedup_threshold),
        "format_versions": {
            "embedding_file": EMBEDDING_FORMAT_VERSION,
            "label_file": LABEL_FORMAT_VERSION,
            "report": 1,
        },
    }
    return IqReport(
        config=config,
        subset_n=subset.n,
        subset_d=subset.d,
        fingerprint=content_fingerprint(subset),
        consis=consis,
        spectrum=spectrum,
        rankme_score=rankme,
        iq=iq,
        plane_point=(spectrum.r_norm, cbar),
        timings_ms=timings,
    )


def _lap(t_start: float) -> float:
    return (time.perf_counter() - t_start) * 1000.0
