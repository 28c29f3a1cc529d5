"""File formats, identity-stratified sampling, dedup, and label-noise injection.

Binary formats (little-endian throughout):

Embedding file::

    bytes 0-3   magic "IQEM"
    bytes 4-7   version = 1            (uint32)
    bytes 8-15  n                      (uint64)
    bytes 16-19 d                      (uint32)
    byte  20    dtype code, 0 = float32
    bytes 21-23 zero padding
    then n*d float32 values, row-major

Label file::

    bytes 0-3   magic "IQLB"
    bytes 4-7   version = 1            (uint32)
    bytes 8-15  n                      (uint64)
    then n int64 labels

CSV mode: one row per sample, d numeric columns then one label column
(integer or string); an optional header row is auto-detected by a
non-numeric value in the feature columns of the first row. String labels
are mapped to dense integers in first-appearance order.

All randomized operations use numpy's PCG64 generator, whose output
stream is stable across platforms for a fixed numpy version, and draw in
a documented fixed order so results are bit-reproducible.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSet, LabeledEmbeddingSet, content_fingerprint
from .errors import (
    FormatError,
    LabelCountMismatch,
    NoEligibleIdentity,
    NonFiniteValue,
    NotNormalized,
    SingleIdentity,
)

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"IQEM"
LABEL_MAGIC = b"IQLB"
EMBEDDING_FORMAT_VERSION = 1
LABEL_FORMAT_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQIB3x")
_LAB_HEADER = struct.Struct("<4sIQ")

DEFAULT_DEDUP_THRESHOLD = 0.9999


@dataclass(frozen=True)
class SamplingConfig:
    """Identity-stratified sampling protocol parameters."""

    target_identities: int = 1000
    per_identity: int = 10
    seed: int = 0
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD
    min_identity_size: int = 2

    def __post_init__(self):
        if self.target_identities < 1 or self.per_identity < 1 or self.min_identity_size < 1:
            raise ValueError("target_identities, per_identity, min_identity_size must be >= 1")
        if not (0.0 < self.dedup_threshold <= 1.0):
            raise ValueError("dedup_threshold must lie in (0, 1]")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return {
            "target_identities": self.target_identities,
            "per_identity": self.per_identity,
            "seed": int(self.seed),
            "dedup_threshold": float(self.dedup_threshold),
            "min_identity_size": self.min_identity_size,
        }


@dataclass(frozen=True)
class NoiseConfig:
    """Uniform closed-set label-flip parameters."""

    flip_ratio: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.flip_ratio <= 1.0):
            raise ValueError("flip_ratio must lie in [0, 1]")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return {"flip_ratio": float(self.flip_ratio), "seed": int(self.seed)}


# ---------------------------------------------------------------------------
# file IO


def write_embedding_file(labeled: LabeledEmbeddingSet, path, fmt: str = "binary",
                         labels_path=None) -> None:
    """Write a labeled set; binary mode produces an exact-round-trip pair.

    Binary mode writes embeddings to ``path`` and labels to ``labels_path``
    (default: ``path`` with an .iqlb suffix). CSV mode writes a single file
    with the label as the last column.
    """
    if fmt == "binary":
        data = np.ascontiguousarray(labeled.embeddings.data, dtype="<f4")
        with open(path, "wb") as f:
            f.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_FORMAT_VERSION,
                                     labeled.n, labeled.d, 0))
            f.write(data.tobytes())
        lp = labels_path if labels_path is not None else derive_labels_path(path)
        with open(lp, "wb") as f:
            f.write(_LAB_HEADER.pack(LABEL_MAGIC, LABEL_FORMAT_VERSION, labeled.n))
            f.write(np.ascontiguousarray(labeled.labels, dtype="<i8").tobytes())
    elif fmt == "csv":
        names = labeled.label_names
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            for row, lab in zip(labeled.embeddings.data, labeled.labels):
                spelled = names[lab] if names is not None else int(lab)
                w.writerow([repr(float(v)) for v in row] + [spelled])
    else:
        raise ValueError(f"unknown format {fmt!r}")


def derive_labels_path(embeddings_path) -> str:
    p = str(embeddings_path)
    return (p[: -len(".iqem")] if p.endswith(".iqem") else p) + ".iqlb"


def read_embedding_file(path, fmt: str = "binary", labels_path=None) -> LabeledEmbeddingSet:
    """Read a labeled embedding set written by :func:`write_embedding_file`."""
    if fmt == "binary":
        data = _read_binary_embeddings(path)
        lp = labels_path if labels_path is not None else derive_labels_path(path)
        labels = _read_binary_labels(lp, expected_n=data.shape[0])
        emb = EmbeddingSet(data)
        return LabeledEmbeddingSet(emb, labels)
    if fmt == "csv":
        return _read_csv(path)
    raise ValueError(f"unknown format {fmt!r}")


def _read_binary_embeddings(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_EMB_HEADER.size)
        if len(header) < _EMB_HEADER.size:
            raise FormatError("truncated embedding header", path=path, offset=len(header))
        magic, version, n, d, dtype_code = _EMB_HEADER.unpack(header)
        if magic != EMBEDDING_MAGIC:
            raise FormatError(f"bad magic {magic!r}", path=path, offset=0)
        if version != EMBEDDING_FORMAT_VERSION:
            raise FormatError(f"unsupported embedding format version {version}", path=path, offset=4)
        if dtype_code != 0:
            raise FormatError(f"unsupported dtype code {dtype_code}", path=path, offset=20)
        if n < 1 or d < 1:
            raise FormatError(f"invalid dimensions n={n}, d={d}", path=path, offset=8)
        payload = f.read(n * d * 4 + 1)
        if len(payload) != n * d * 4:
            raise FormatError(
                f"payload holds {len(payload)} bytes, expected exactly {n * d * 4}",
                path=path, offset=_EMB_HEADER.size,
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.isfinite(data).all():
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteValue(int(r), int(c), path=path)
    return data


def _read_binary_labels(path, expected_n: int) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_LAB_HEADER.size)
        if len(header) < _LAB_HEADER.size:
            raise FormatError("truncated label header", path=path, offset=len(header))
        magic, version, n = _LAB_HEADER.unpack(header)
        if magic != LABEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}", path=path, offset=0)
        if version != LABEL_FORMAT_VERSION:
            raise FormatError(f"unsupported label format version {version}", path=path, offset=4)
        if n != expected_n:
            raise LabelCountMismatch(expected_n, n, path=path)
        payload = f.read(n * 8 + 1)
        if len(payload) != n * 8:
            raise FormatError(
                f"payload holds {len(payload)} bytes, expected exactly {n * 8}",
                path=path, offset=_LAB_HEADER.size,
            )
    return np.frombuffer(payload, dtype="<i8").copy()


def _read_csv(path) -> LabeledEmbeddingSet:
    rows: list[list[float]] = []
    labels: list[int] = []
    name_to_id: dict[str, int] = {}
    d = None
    with open(path, newline="") as f:
        for lineno, rec in enumerate(csv.reader(f), start=1):
            if not rec:
                continue
            if d is None:
                d = len(rec) - 1
                if d < 1:
                    raise FormatError("need at least one feature column plus a label column",
                                      path=path, line=lineno)
                try:
                    [float(v) for v in rec[:d]]
                except ValueError:
                    continue  # header row
            if len(rec) != d + 1:
                raise FormatError(f"expected {d + 1} columns, got {len(rec)}",
                                  path=path, line=lineno)
            try:
                rows.append([float(v) for v in rec[:d]])
            except ValueError as e:
                raise FormatError(f"non-numeric feature value: {e}", path=path, line=lineno)
            name = rec[d]
            if name not in name_to_id:
                name_to_id[name] = len(name_to_id)
            labels.append(name_to_id[name])
    if not rows:
        raise FormatError("no data rows", path=path)
    data = np.asarray(rows, dtype=np.float32)
    if not np.isfinite(data).all():
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteValue(int(r), int(c), path=path)
    names = tuple(name_to_id)  # insertion order = first appearance
    return LabeledEmbeddingSet(EmbeddingSet(data), np.asarray(labels, dtype=np.int64),
                               label_names=names)


# ---------------------------------------------------------------------------
# dedup


@dataclass(frozen=True)
class DedupRecord:
    """One dropped row and the already-kept row that triggered the drop."""

    dropped_row: int
    kept_row: int
    similarity: float

    def to_dict(self) -> dict:
        return {"dropped_row": self.dropped_row, "kept_row": self.kept_row,
                "similarity": float(self.similarity)}


def _dedup_pool(data64: np.ndarray, pool: np.ndarray, threshold: float,
                records: list[DedupRecord]) -> np.ndarray:
    """Greedy scan of one identity's rows in index order; returns kept rows."""
    kept: list[int] = []
    for row in pool:
        row = int(row)
        if kept:
            sims = data64[kept] @ data64[row]
            hit = np.flatnonzero(sims >= threshold)
            if hit.size:
                records.append(DedupRecord(row, kept[int(hit[0])], float(sims[int(hit[0])])))
                continue
        kept.append(row)
    return np.asarray(kept, dtype=np.int64)


def dedup_within_identity(labeled: LabeledEmbeddingSet,
                          threshold: float = DEFAULT_DEDUP_THRESHOLD
                          ) -> tuple[LabeledEmbeddingSet, list[DedupRecord]]:
    """Drop near-duplicate rows within each identity.

    Rows are scanned in index order; a row is dropped when its cosine
    similarity to an already-kept row of the same identity reaches the
    threshold. Cross-identity pairs are never compared, kept rows keep
    their original relative order, and the first row of an identity is
    never dropped.
    """
    if not labeled.embeddings.unit_normalized:
        raise NotNormalized("dedup_within_identity requires unit-normalized embeddings")
    data64 = labeled.embeddings.data.astype(np.float64)
    records: list[DedupRecord] = []
    kept_all: list[np.ndarray] = []
    for lab in sorted(labeled.identity_index):
        kept_all.append(_dedup_pool(data64, labeled.identity_index[lab], threshold, records))
    keep = np.sort(np.concatenate(kept_all))
    return labeled.take_rows(keep), sorted(records, key=lambda r: r.dropped_row)


# ---------------------------------------------------------------------------
# stratified sampling


@dataclass(frozen=True)
class SamplingManifest:
    """Reproducible record of one stratified draw."""

    config: SamplingConfig
    source_fingerprint: str
    entries: list  # (identity, tuple of chosen source-row indices), selection order
    excluded_small: int  # identities below min_identity_size
    dedup_dropped: int  # rows removed from pools before drawing

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "source_fingerprint_sha256": self.source_fingerprint,
            "entries": [{"identity": int(lab), "rows": [int(r) for r in rows]}
                        for lab, rows in self.entries],
            "excluded_small_identities": int(self.excluded_small),
            "dedup_dropped_rows": int(self.dedup_dropped),
        }


def stratified_sample(labeled: LabeledEmbeddingSet, cfg: SamplingConfig
                      ) -> tuple[LabeledEmbeddingSet, SamplingManifest]:
    """Select up to M identities, then up to m rows per identity.

    Identities with fewer than ``min_identity_size`` rows are excluded
    (a lone row has no same-label neighbor and poisons the consistency
    mean). Selection is a seeded shuffle of the eligible identities;
    each selected identity's pool is deduplicated before drawing. Output
    rows are grouped by identity in selection order, ascending row order
    within an identity. Identical (set, config) yields a bit-identical
    subset and manifest.
    """
    if not labeled.embeddings.unit_normalized:
        raise NotNormalized("stratified_sample requires unit-normalized embeddings")
    index = labeled.identity_index
    eligible = np.asarray([lab for lab in sorted(index) if len(index[lab]) >= cfg.min_identity_size],
                          dtype=np.int64)
    excluded = len(index) - eligible.size
    if excluded:
        log.info("stratified_sample: excluded %d identities below min size %d",
                 excluded, cfg.min_identity_size)
    if eligible.size == 0:
        raise NoEligibleIdentity(
            f"no identity has >= {cfg.min_identity_size} rows")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(eligible.size)[: min(cfg.target_identities, eligible.size)]
    selected = eligible[order]

    data64 = labeled.embeddings.data.astype(np.float64)
    records: list[DedupRecord] = []
    entries = []
    chosen_all: list[np.ndarray] = []
    for lab in selected:
        pool = _dedup_pool(data64, index[int(lab)], cfg.dedup_threshold, records)
        take = rng.permutation(pool.size)[: min(cfg.per_identity, pool.size)]
        rows = np.sort(pool[take])
        entries.append((int(lab), tuple(int(r) for r in rows)))
        chosen_all.append(rows)
    rows = np.concatenate(chosen_all)
    manifest = SamplingManifest(cfg, content_fingerprint(labeled), entries,
                                excluded, len(records))
    return labeled.take_rows(rows), manifest


# ---------------------------------------------------------------------------
# label noise


@dataclass(frozen=True)
class FlipRecord:
    row: int
    old_label: int
    new_label: int

    def to_dict(self) -> dict:
        return {"row": self.row, "old_label": self.old_label, "new_label": self.new_label}


@dataclass(frozen=True)
class FlipLog:
    config: NoiseConfig
    source_fingerprint: str
    flips: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "source_fingerprint_sha256": self.source_fingerprint,
            "flips": [f.to_dict() for f in self.flips],
            "flip_count": len(self.flips),
        }


def inject_uniform_flip_noise(labeled: LabeledEmbeddingSet, cfg: NoiseConfig
                              ) -> tuple[LabeledEmbeddingSet, FlipLog]:
    """Flip each row's label with probability ``flip_ratio``.

    A flipped label is resampled uniformly from the other distinct labels
    present in the set, so the label set stays closed and a flip never
    reproduces the original label. Flip decisions take one uniform draw
    per row in row order; embeddings are untouched.
    """
    labels = labeled.labels.copy()
    distinct = np.unique(labels)
    if cfg.flip_ratio > 0 and distinct.size < 2:
        raise SingleIdentity("need >= 2 distinct identities to flip labels")
    rng = np.random.default_rng(cfg.seed)
    u = rng.random(labeled.n)
    flips: list[FlipRecord] = []
    for row in np.flatnonzero(u < cfg.flip_ratio):
        row = int(row)
        old = int(labels[row])
        pos = int(np.searchsorted(distinct, old))
        j = int(rng.integers(distinct.size - 1))
        if j >= pos:
            j += 1
        new = int(distinct[j])
        labels[row] = new
        flips.append(FlipRecord(row, old, new))
    out = labeled.with_labels(labels)
    return out, FlipLog(cfg, content_fingerprint(labeled), flips)
