"""Command-line front door.

Subcommands: compute, synth, sweep-beta, compare, inject-noise, sample.
Exit codes: 0 success, 2 input/format error, 3 computation/validation
error. Errors go to stderr as a single JSON line. All primary outputs
are byte-deterministic for identical inputs and flags; wall-clock lives
only in the report's ``timings_ms`` field, which the determinism
contract excludes (strip it with ``canonical_report_bytes``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .core import IqReport, LabeledEmbeddingSet, l2_normalize_rows
from .dataio import (
    DEFAULT_DEDUP_THRESHOLD,
    NoiseConfig,
    SamplingConfig,
    inject_uniform_flip_noise,
    read_embedding_file,
    stratified_sample,
    write_embedding_file,
)
from .errors import IqScoreError
from .iqfuse import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    SettingsSeries,
    beta_sweep,
    default_beta_grid,
    rank_agreement_report,
)
from .pipeline import DEFAULT_BINS, DEFAULT_K, DEFAULT_RANKME_EPSILON, compute_iq_report
from .spectral import log_spectrum, spectrum_to_csv
from .synthgen import ScenarioSeries, run_scenario

log = logging.getLogger("iqscore")


def _json_dumps(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_to_json(report: IqReport, include_timings: bool = True) -> str:
    return _json_dumps(report.to_dict(include_timings=include_timings))


def canonical_report_bytes(payload: dict) -> bytes:
    """Serialized report with the timings field removed; the unit of the
    byte-determinism contract."""
    payload = dict(payload)
    payload.pop("timings_ms", None)
    return _json_dumps(payload).encode()


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _add_common_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=DEFAULT_K, help="neighborhood size (default 10)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA,
                   help="consistency weight (default 0.2)")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA,
                   help="effective-rank weight (default 0.8)")
    p.add_argument("--agreement", choices=["raw", "ceiling"], default="raw",
                   help="per-sample agreement denominator (default raw)")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS,
                   help="agreement histogram bins (default 20)")
    p.add_argument("--rankme-epsilon", type=float, default=DEFAULT_RANKME_EPSILON)
    p.add_argument("--spectrum-method", choices=["auto", "covariance", "gram"],
                   default="auto")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for k-NN; never changes output bytes "
                        "(env fallback IQSCORE_THREADS)")


def _add_sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--identities", type=int, default=1000,
                   help="target identity count M (default 1000)")
    p.add_argument("--per-identity", type=int, default=10,
                   help="rows per identity m (default 10)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--dedup-threshold", type=float, default=DEFAULT_DEDUP_THRESHOLD,
                   help="cosine threshold for near-duplicate removal (default 0.9999)")
    p.add_argument("--min-identity-size", type=int, default=2)


def _sampling_from_args(args) -> SamplingConfig:
    return SamplingConfig(
        target_identities=args.identities,
        per_identity=args.per_identity,
        seed=args.seed,
        dedup_threshold=args.dedup_threshold,
        min_identity_size=args.min_identity_size,
    )


def _cmd_compute(args) -> int:
    labeled = read_embedding_file(args.embeddings, fmt=args.format,
                                  labels_path=args.labels)
    sampling = None if args.no_sample else _sampling_from_args(args)
    report = compute_iq_report(
        labeled, k=args.k, alpha=args.alpha, beta=args.beta,
        sampling=sampling, dedup_threshold=args.dedup_threshold,
        agreement_mode=args.agreement, bins=args.bins,
        rankme_epsilon=args.rankme_epsilon, spectrum_method=args.spectrum_method,
        threads=args.threads)
    _write_text(args.out, report_to_json(report))
    if args.sidecar_dir is not None:
        _write_sidecars(report, Path(args.sidecar_dir))
    return 0


def _write_sidecars(report: IqReport, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "agreement_histogram.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_left", "bin_right", "count"])
        edges = report.consis.hist_edges
        for i, c in enumerate(report.consis.hist_counts):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
    spectrum_to_csv(report.spectrum.eigenvalues, outdir / "spectrum.csv", "eigenvalue")
    spectrum_to_csv(report.spectrum.cev, outdir / "cev.csv", "cumulative_explained_variance")
    spectrum_to_csv(log_spectrum(report.spectrum.eigenvalues),
                    outdir / "log_spectrum.csv", "log_eigenvalue")


def _cmd_synth(args) -> int:
    series = ScenarioSeries.from_json_file(args.scenario)
    sampling = _sampling_from_args(args) if args.own_sampling else None
    reports, plane = run_scenario(series, k=args.k, alpha=args.alpha, beta=args.beta,
                                  sampling=sampling, agreement_mode=args.agreement,
                                  threads=args.threads)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for entry, report in zip(series.entries, reports):
        (outdir / f"report_{entry.name}.json").write_text(report_to_json(report))
    with open(outdir / "plane.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "flip_ratio", "er_norm", "consis", "iq"])
        for row in plane:
            w.writerow([row["name"], repr(row["flip_ratio"]), repr(row["er_norm"]),
                        repr(row["consis"]), repr(row["iq"])])
    return 0


def _cmd_sweep_beta(args) -> int:
    series = SettingsSeries.from_csv(args.series)
    grid = default_beta_grid(args.grid_step)
    rows = beta_sweep(series, grid)
    lines = ["beta,spearman,pearson"]
    lines += [f"{r['beta']:.2f},{r['spearman']:.6f},{r['pearson']:.6f}" for r in rows]
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_compare(args) -> int:
    series = SettingsSeries.from_csv(args.series)
    report = rank_agreement_report(series, alpha=args.alpha, beta=args.beta)
    lines = ["metric,spearman,pearson,kendall_tau"]
    lines += [f"{m},{s:.6f},{p:.6f},{k:.6f}" for m, s, p, k in report.rows]
    _write_text(args.out_csv, "\n".join(lines) + "\n")
    if args.out_json is not None:
        _write_text(args.out_json, _json_dumps(report.to_dict()))
    return 0


def _cmd_sample(args) -> int:
    labeled = read_embedding_file(args.embeddings, fmt=args.format,
                                  labels_path=args.labels)
    if not labeled.embeddings.unit_normalized:
        labeled = LabeledEmbeddingSet(l2_normalize_rows(labeled.embeddings),
                                      labeled.labels, source_ids=labeled.source_ids,
                                      label_names=labeled.label_names)
    subset, manifest = stratified_sample(labeled, _sampling_from_args(args))
    prefix = args.out_prefix
    write_embedding_file(subset, prefix + ".iqem", "binary", prefix + ".iqlb")
    _write_text(prefix + ".manifest.json", _json_dumps(manifest.to_dict()))
    return 0


def _cmd_inject_noise(args) -> int:
    labeled = read_embedding_file(args.embeddings, fmt=args.format,
                                  labels_path=args.labels)
    noisy, fliplog = inject_uniform_flip_noise(
        labeled, NoiseConfig(args.flip_ratio, seed=args.seed))
    prefix = args.out_prefix
    write_embedding_file(noisy, prefix + ".iqem", "binary", prefix + ".iqlb")
    _write_text(prefix + ".fliplog.json", _json_dumps(fliplog.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqscore",
        description="Validation-free intrinsic quality scoring for labeled "
                    "embedding datasets")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="score one labeled embedding dataset")
    p.add_argument("embeddings", help="embedding file (.iqem or .csv)")
    p.add_argument("labels", nargs="?", default=None,
                   help="label file (.iqlb); binary mode only, defaults to the "
                        "embedding path with an .iqlb suffix")
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--out", default=None, help="report JSON path (default stdout)")
    p.add_argument("--sidecar-dir", default=None,
                   help="directory for plot-ready CSV sidecars")
    p.add_argument("--no-sample", action="store_true",
                   help="analyze the whole file instead of a stratified subset")
    _add_sampling_flags(p)
    _add_common_pipeline_flags(p)
    p.set_defaults(func=_cmd_compute)

    p = sub.add_parser("synth", help="run a synthetic scenario series")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--own-sampling", action="store_true",
                   help="override the per-entry derived sampling with the "
                        "sampling flags below")
    _add_sampling_flags(p)
    _add_common_pipeline_flags(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sweep-beta", help="correlation vs accuracy across fusion weights")
    p.add_argument("series", help="settings CSV (name,accuracy,consis,er_norm[,rankme])")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out", default=None, help="sweep CSV path (default stdout)")
    p.set_defaults(func=_cmd_sweep_beta)

    p = sub.add_parser("compare", help="rank-agreement table for intrinsic metrics")
    p.add_argument("series", help="settings CSV (name,accuracy,consis,er_norm[,rankme])")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--out-csv", default=None, help="table CSV path (default stdout)")
    p.add_argument("--out-json", default=None, help="also write the table as JSON")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sample", help="write a stratified subset plus manifest")
    p.add_argument("embeddings")
    p.add_argument("labels", nargs="?", default=None)
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--out-prefix", required=True)
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("inject-noise", help="flip labels uniformly within the closed set")
    p.add_argument("embeddings")
    p.add_argument("labels", nargs="?", default=None)
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--flip-ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_inject_noise)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except IqScoreError as e:
        sys.stderr.write(json.dumps(
            {"error": type(e).__name__, "message": str(e)}) + "\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(json.dumps(
            {"error": type(e).__name__, "message": str(e),
             "path": getattr(e, "filename", None)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
