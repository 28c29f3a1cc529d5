"""Core domain types shared by every analysis stage.

All containers are immutable after construction (arrays are stored
read-only), so instances can be shared across worker threads without
locks. Data is stored in float32; every reduction downstream runs in
float64 accumulators.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    LabelCountMismatch,
    NonFiniteValue,
    NotNormalized,
    WeightError,
    ZeroNormRow,
)

UNIT_NORM_ATOL = 1e-4
REPORT_SCHEMA_VERSION = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """Dense n x d matrix of real-valued embeddings, one row per sample.

    ``unit_normalized`` is a promise, verified at construction, that every
    row has Euclidean norm 1 within 1e-4. Non-finite entries are rejected
    outright: intrinsic metrics are meaningless on corrupt input.
    """

    data: np.ndarray
    unit_normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"embedding matrix must be 2-D with n,d >= 1, got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        if not np.isfinite(data).all():
            r, c = np.argwhere(~np.isfinite(data))[0]
            raise NonFiniteValue(int(r), int(c))
        object.__setattr__(self, "data", _readonly(data))
        if self.unit_normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            worst = int(np.abs(norms - 1.0).argmax())
            if abs(norms[worst] - 1.0) > UNIT_NORM_ATOL:
                raise NotNormalized(
                    f"unit_normalized set but row {worst} has norm {norms[worst]:.6g}"
                )

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def l2_normalize_rows(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit Euclidean norm.

    Norms are computed in float64 and each entry is rounded back to
    float32 exactly once, which makes the operation idempotent to within
    1 ulp per entry on a second pass.

    Raises ZeroNormRow if any row has norm <= 1e-12.
    """
    data64 = embeddings.data.astype(np.float64)
    norms = np.linalg.norm(data64, axis=1)
    tiny = norms <= 1e-12
    if tiny.any():
        raise ZeroNormRow(int(np.flatnonzero(tiny)[0]))
    out = (data64 / norms[:, None]).astype(np.float32)
    return EmbeddingSet(out, unit_normalized=True)


@dataclass(frozen=True)
class LabeledEmbeddingSet:
    """EmbeddingSet plus one non-negative integer identity label per row.

    ``label_names`` optionally records the string spelling behind each
    dense integer label (index = label), as produced by CSV ingestion.
    ``source_ids`` optionally carries per-row provenance ids.
    """

    embeddings: EmbeddingSet
    labels: np.ndarray
    source_ids: np.ndarray | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-D vector")
        if labels.shape[0] != self.embeddings.n:
            raise LabelCountMismatch(self.embeddings.n, int(labels.shape[0]))
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integers (map strings at ingestion)")
        labels = labels.astype(np.int64)
        if labels.size and int(labels.min()) < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", _readonly(labels))
        if self.source_ids is not None:
            sids = np.asarray(self.source_ids)
            if sids.shape != (self.embeddings.n,):
                raise ValueError("source_ids must have one entry per row")
            object.__setattr__(self, "source_ids", _readonly(sids))

    @property
    def n(self) -> int:
        return self.embeddings.n

    @property
    def d(self) -> int:
        return self.embeddings.d

    @cached_property
    def identity_index(self) -> dict[int, np.ndarray]:
        """Mapping label -> row indices carrying it, ascending per label."""
        order = np.argsort(self.labels, kind="stable")
        sorted_labels = self.labels[order]
        distinct, starts = np.unique(sorted_labels, return_index=True)
        bounds = np.append(starts[1:], len(order))
        return {
            int(lab): _readonly(order[s:e])
            for lab, s, e in zip(distinct, starts, bounds)
        }

    def with_labels(self, labels: np.ndarray) -> "LabeledEmbeddingSet":
        """Same embeddings, new labels (used by noise injection)."""
        return LabeledEmbeddingSet(
            self.embeddings, labels, source_ids=self.source_ids, label_names=self.label_names
        )

    def take_rows(self, rows: np.ndarray) -> "LabeledEmbeddingSet":
        """Row subset in the given order; the unit-norm flag is preserved."""
        rows = np.asarray(rows, dtype=np.int64)
        sub = EmbeddingSet(self.embeddings.data[rows], self.embeddings.unit_normalized)
        sids = self.source_ids[rows] if self.source_ids is not None else None
        return LabeledEmbeddingSet(sub, self.labels[rows], source_ids=sids,
                                   label_names=self.label_names)


def content_fingerprint(labeled: LabeledEmbeddingSet) -> str:
    """SHA-256 over the little-endian bytes of (data, labels).

    Stable content identity for the exact analyzed subset, so downstream
    comparisons can detect silent input drift.
    """
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(labeled.embeddings.data, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(labeled.labels, dtype="<i8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class SpectrumSummary:
    """Descending covariance eigenvalues and the statistics built on them."""

    eigenvalues: np.ndarray
    weights_p: np.ndarray
    r_ent: float
    r_norm: float
    q_cap: int
    cev: np.ndarray
    components_to_cev: dict[float, int]

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        p = np.asarray(self.weights_p, dtype=np.float64)
        if lam.ndim != 1 or p.shape != lam.shape:
            raise ValueError("eigenvalues and weights_p must be 1-D with equal length")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        if lam.size and lam.min() < 0:
            raise ValueError("eigenvalues must be clipped at 0")
        if abs(p.sum() - 1.0) > 1e-9 or p.min() < 0 or p.max() > 1 + 1e-12:
            raise ValueError("weights_p must lie in [0,1] and sum to 1")
        if not (1.0 - 1e-6 <= self.r_ent <= self.q_cap + 1e-6):
            raise ValueError(f"r_ent {self.r_ent} outside [1, Q={self.q_cap}]")
        if not (-1e-9 <= self.r_norm <= 1 + 1e-9):
            raise ValueError(f"r_norm {self.r_norm} outside [0, 1]")
        cev = np.asarray(self.cev, dtype=np.float64)
        if np.any(np.diff(cev) < -1e-12) or abs(cev[-1] - 1.0) > 1e-9:
            raise ValueError("cev must be nondecreasing and end at 1")
        object.__setattr__(self, "eigenvalues", _readonly(lam))
        object.__setattr__(self, "weights_p", _readonly(p))
        object.__setattr__(self, "cev", _readonly(cev))

    def to_dict(self) -> dict:
        return {
            "r_ent": float(self.r_ent),
            "r_norm": float(self.r_norm),
            "q_cap": int(self.q_cap),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "cev": [float(v) for v in self.cev],
            "components_to_cev": {f"{t:.2f}": int(c) for t, c in sorted(self.components_to_cev.items())},
        }


@dataclass(frozen=True)
class ConsisSummary:
    """Per-sample neighborhood agreement and its dataset-level aggregate."""

    agreement: np.ndarray
    mean_consis: float
    k_used: int
    ceiling_normalized: bool
    hist_edges: np.ndarray
    hist_counts: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.agreement, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("agreement must be a nonempty 1-D vector")
        if abs(float(np.mean(a)) - self.mean_consis) > 1e-9:
            raise ValueError("mean_consis does not match the agreement vector")
        if int(self.hist_counts.sum()) != a.size:
            raise ValueError("histogram counts must sum to n")
        object.__setattr__(self, "agreement", _readonly(a))
        object.__setattr__(self, "hist_edges", _readonly(np.asarray(self.hist_edges, dtype=np.float64)))
        object.__setattr__(self, "hist_counts", _readonly(np.asarray(self.hist_counts, dtype=np.int64)))

    def to_dict(self) -> dict:
        return {
            "mean": float(self.mean_consis),
            "k_used": int(self.k_used),
            "ceiling_normalized": bool(self.ceiling_normalized),
            "histogram": {
                "bin_edges": [float(v) for v in self.hist_edges],
                "counts": [int(v) for v in self.hist_counts],
            },
        }


@dataclass(frozen=True)
class IqReport:
    """Full record of one intrinsic-quality run.

    ``timings_ms`` is deliberately excluded from the byte-determinism
    contract; everything else in the serialized report is reproducible
    bit-for-bit for identical inputs and configuration.
    """

    config: dict
    subset_n: int
    subset_d: int
    fingerprint: str
    consis: ConsisSummary
    spectrum: SpectrumSummary
    rankme_score: float
    iq: float
    plane_point: tuple[float, float]
    timings_ms: dict = field(default_factory=dict)

    def __post_init__(self):
        alpha = float(self.config["alpha"])
        beta = float(self.config["beta"])
        if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-12:
            raise WeightError(f"alpha={alpha}, beta={beta} is not a convex pair")
        expected = alpha * self.consis.mean_consis + beta * self.spectrum.r_norm
        if not math.isfinite(self.iq) or abs(self.iq - expected) > 1e-12:
            raise ValueError("iq does not match recomputation from its own fields")

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config,
            "subset": {
                "n": int(self.subset_n),
                "d": int(self.subset_d),
                "fingerprint_sha256": self.fingerprint,
            },
            "consis": self.consis.to_dict(),
            "spectrum": self.spectrum.to_dict(),
            "rankme": {
                "score": float(self.rankme_score),
                "epsilon": float(self.config.get("rankme_epsilon", 1e-7)),
                "centered": False,
            },
            "iq": float(self.iq),
            "plane_point": [float(self.plane_point[0]), float(self.plane_point[1])],
        }
        if include_timings:
            out["timings_ms"] = {k: float(v) for k, v in self.timings_ms.items()}
        return out
