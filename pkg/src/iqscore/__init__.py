"""Validation-free intrinsic quality scoring for labeled embedding datasets.

The headline number is a convex fusion of two complementary signals
computed from a dataset's embeddings and identity labels:

* neighbor consistency: the mean fraction of each sample's k nearest
  cosine neighbors that share its label (local label coherence);
* normalized effective rank: the entropy-based effective rank of the
  centered embedding covariance, log-normalized by min(n, d) (global
  subspace breadth).

Everything needed around that score ships here too: bit-exact file
formats, identity-stratified sampling with dedup, closed-set label-noise
injection, a rankme baseline, rank-correlation validation, synthetic
cluster worlds with known ground truth, and a CLI.
"""

__version__ = "0.1.0"

from .core import (
    ConsisSummary,
    EmbeddingSet,
    IqReport,
    LabeledEmbeddingSet,
    SpectrumSummary,
    content_fingerprint,
    l2_normalize_rows,
)
from .dataio import (
    FlipLog,
    NoiseConfig,
    SamplingConfig,
    SamplingManifest,
    dedup_within_identity,
    inject_uniform_flip_noise,
    read_embedding_file,
    stratified_sample,
    write_embedding_file,
)
from .iqfuse import (
    RankAgreementReport,
    SettingsSeries,
    beta_sweep,
    iq_score,
    kendall_tau_b,
    pearson,
    rank_agreement_report,
    spearman,
)
from .neighbors import (
    NeighborTable,
    agreement_histogram,
    exact_topk_cosine,
    mean_consistency,
    naive_topk_cosine,
    per_sample_agreement,
)
from .pipeline import compute_iq_report
from .spectral import (
    center_rows,
    covariance,
    cumulative_explained_variance,
    effective_rank,
    embedding_spectrum,
    log_spectrum,
    normalized_effective_rank,
    rankme_score,
    summarize_spectrum,
    sym_eigenvalues,
)
from .synthgen import (
    ClusterWorldConfig,
    ScenarioEntry,
    ScenarioSeries,
    build_noise_series,
    build_scaling_series,
    generate_cluster_world,
    run_scenario,
)

__all__ = [
    "ClusterWorldConfig",
    "ConsisSummary",
    "EmbeddingSet",
    "FlipLog",
    "IqReport",
    "LabeledEmbeddingSet",
    "NeighborTable",
    "NoiseConfig",
    "RankAgreementReport",
    "SamplingConfig",
    "SamplingManifest",
    "ScenarioEntry",
    "ScenarioSeries",
    "SettingsSeries",
    "SpectrumSummary",
    "agreement_histogram",
    "beta_sweep",
    "build_noise_series",
    "build_scaling_series",
    "center_rows",
    "compute_iq_report",
    "content_fingerprint",
    "covariance",
    "cumulative_explained_variance",
    "dedup_within_identity",
    "effective_rank",
    "embedding_spectrum",
    "exact_topk_cosine",
    "generate_cluster_world",
    "inject_uniform_flip_noise",
    "iq_score",
    "kendall_tau_b",
    "l2_normalize_rows",
    "log_spectrum",
    "mean_consistency",
    "naive_topk_cosine",
    "normalized_effective_rank",
    "pearson",
    "per_sample_agreement",
    "rank_agreement_report",
    "rankme_score",
    "read_embedding_file",
    "run_scenario",
    "spearman",
    "stratified_sample",
    "summarize_spectrum",
    "sym_eigenvalues",
    "write_embedding_file",
]
