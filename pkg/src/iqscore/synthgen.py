"""Synthetic labeled-embedding worlds with known ground truth.

A world is a set of identity clusters on the unit hypersphere: centers
are drawn uniformly (normalized isotropic Gaussians) and each sample is
``normalize(center + offset)`` where the offset is an isotropic Gaussian
scaled so its expected norm is the dispersion parameter. Dispersion
therefore plays the role of an inverse concentration; this is not exact
von Mises-Fisher sampling, just a dependency-free directional-cluster
model that is sufficient for regime studies.

Scenario series recreate the clean-scaling and label-noise regimes at
desk scale: scaling varies the identity count across separately seeded
worlds, noise varies the flip ratio over one fixed world.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import EmbeddingSet, LabeledEmbeddingSet
from .dataio import NoiseConfig, SamplingConfig, inject_uniform_flip_noise
from .errors import FormatError, IqScoreError
from .iqfuse import DEFAULT_ALPHA, DEFAULT_BETA
from .pipeline import DEFAULT_K, compute_iq_report

log = logging.getLogger(__name__)

_FLIP_STREAM = 1
_SAMPLE_STREAM = 2


def derive_seed(base_seed: int, *stream: int) -> int:
    """Deterministic 64-bit child seed for a named substream."""
    ss = np.random.SeedSequence([int(base_seed), *[int(s) for s in stream]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ClusterWorldConfig:
    """Parameters of one synthetic identity-cluster world."""

    num_identities: int
    per_identity: int
    dim: int
    dispersion: float
    seed: int = 0

    def __post_init__(self):
        if self.num_identities < 1 or self.per_identity < 1 or self.dim < 1:
            raise ValueError("num_identities, per_identity, dim must be >= 1")
        if not (0.0 <= self.dispersion < 10.0):
            raise ValueError("dispersion must lie in [0, 10)")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return {
            "num_identities": self.num_identities,
            "per_identity": self.per_identity,
            "dim": self.dim,
            "dispersion": float(self.dispersion),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterWorldConfig":
        try:
            return cls(int(d["num_identities"]), int(d["per_identity"]),
                       int(d["dim"]), float(d["dispersion"]), int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad world config: {e}")


def generate_cluster_world(cfg: ClusterWorldConfig) -> LabeledEmbeddingSet:
    """Draw a unit-normalized world; bit-reproducible for a fixed seed.

    Draw order is fixed: all centers first, then all offsets. Labels are
    assigned by generating identity (0..M-1, each repeated m times).
    """
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.num_identities, cfg.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    n = cfg.num_identities * cfg.per_identity
    # expected offset norm equals dispersion: per-coordinate std sigma/sqrt(d)
    offsets = rng.standard_normal((n, cfg.dim)) * (cfg.dispersion / np.sqrt(cfg.dim))
    samples = np.repeat(centers, cfg.per_identity, axis=0) + offsets
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    labels = np.repeat(np.arange(cfg.num_identities, dtype=np.int64), cfg.per_identity)
    return LabeledEmbeddingSet(EmbeddingSet(samples.astype(np.float32), unit_normalized=True),
                               labels)


@dataclass(frozen=True)
class ScenarioEntry:
    name: str
    world: ClusterWorldConfig
    flip_ratio: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.flip_ratio <= 1.0):
            raise ValueError("flip_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"name": self.name, "world": self.world.to_dict(),
                "flip_ratio": float(self.flip_ratio)}


@dataclass(frozen=True)
class ScenarioSeries:
    """Named list of (world, flip ratio) settings; names must be unique."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise FormatError("scenario series must contain at least one entry")
        names = [e.name for e in entries]
        if len(names) != len(set(names)):
            raise FormatError("scenario entry names must be unique")
        object.__setattr__(self, "entries", entries)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSeries":
        if not isinstance(d, dict) or "entries" not in d or not isinstance(d["entries"], list):
            raise FormatError("scenario file must be an object with an 'entries' list")
        entries = []
        for i, rec in enumerate(d["entries"]):
            try:
                entries.append(ScenarioEntry(
                    str(rec["name"]),
                    ClusterWorldConfig.from_dict(rec["world"]),
                    float(rec.get("flip_ratio", 0.0)),
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(f"bad scenario entry {i}: {e}")
        return cls(tuple(entries))

    @classmethod
    def from_json_file(cls, path) -> "ScenarioSeries":
        try:
            with open(path) as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e}", path=path)
        try:
            return cls.from_dict(payload)
        except FormatError as e:
            raise FormatError(str(e), path=path)


def build_scaling_series(base: ClusterWorldConfig, identity_counts) -> ScenarioSeries:
    """Clean scaling: one world per identity count, flip ratio 0.

    Each element gets its own deterministic child seed so worlds are
    independent draws from the same family.
    """
    counts = [int(c) for c in identity_counts]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("identity_counts must be strictly increasing")
    entries = [
        ScenarioEntry(f"scale_{c}",
                      replace(base, num_identities=c, seed=derive_seed(base.seed, i)),
                      0.0)
        for i, c in enumerate(counts)
    ]
    return ScenarioSeries(tuple(entries))


def build_noise_series(base: ClusterWorldConfig, ratios) -> ScenarioSeries:
    """Label noise: the same world (identical seed) at increasing flip ratios."""
    ratios = [float(r) for r in ratios]
    if any(not (0.0 <= r <= 1.0) for r in ratios):
        raise ValueError("ratios must lie in [0, 1]")
    if any(b < a for a, b in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be nondecreasing")
    entries = [ScenarioEntry(f"noise_{r:g}", base, r) for r in ratios]
    return ScenarioSeries(tuple(entries))


def run_scenario(series, *, k: int = DEFAULT_K,
                 alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                 sampling: SamplingConfig | None = None,
                 agreement_mode: str = "raw",
                 threads: int | None = None) -> tuple[list, list[dict]]:
    """Generate, corrupt, sample, and score every entry of a series.

    Returns one IqReport per entry plus the combined (er_norm, consis)
    plane table. ``sampling`` defaults to the standard 1000 x 10 budget
    with a seed derived from each entry's world seed. An empty entry
    iterable yields an empty report list.
    """
    entries = series.entries if isinstance(series, ScenarioSeries) else tuple(series)
    reports = []
    plane: list[dict] = []
    for i, entry in enumerate(entries):
        try:
            world = generate_cluster_world(entry.world)
            if entry.flip_ratio > 0.0:
                noise = NoiseConfig(entry.flip_ratio,
                                    seed=derive_seed(entry.world.seed, _FLIP_STREAM))
                world, _fliplog = inject_uniform_flip_noise(world, noise)
            cfg = sampling
            if cfg is None:
                cfg = SamplingConfig(seed=derive_seed(entry.world.seed, _SAMPLE_STREAM))
            report = compute_iq_report(world, k=k, alpha=alpha, beta=beta,
                                       sampling=cfg, agreement_mode=agreement_mode,
                                       threads=threads)
        except IqScoreError as e:
            e.args = (f"entry {entry.name!r}: {e}",)
            raise
        reports.append(report)
        plane.append({
            "name": entry.name,
            "flip_ratio": float(entry.flip_ratio),
            "er_norm": report.spectrum.r_norm,
            "consis": report.consis.mean_consis,
            "iq": report.iq,
        })
    return reports, plane
