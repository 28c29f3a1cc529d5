"""Score fusion and the correlation / ranking-agreement validation suite.

Downstream accuracies are always externally supplied (file inputs);
nothing here trains or evaluates a model. Correlations use the standard
tied-data conventions: average ranks for Spearman, tau-b for Kendall.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, LengthMismatch, WeightError, ZeroVariance

DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.8
DEFAULT_BETA_GRID_STEP = 0.05


def iq_score(mean_consis: float, er_norm: float,
             alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> float:
    """Convex fusion alpha * consis + beta * normalized effective rank."""
    if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-12:
        raise WeightError(f"weights ({alpha}, {beta}) must be non-negative and sum to 1")
    for name, v in (("mean_consis", mean_consis), ("er_norm", er_norm)):
        if not (math.isfinite(v) and -1e-9 <= v <= 1 + 1e-9):
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return alpha * mean_consis + beta * er_norm


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise LengthMismatch(f"paired vectors must be 1-D and equal length, "
                             f"got {x.shape} and {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least 2 points")
    return x, y


def pearson(x, y) -> float:
    """Product-moment correlation, float64 accumulation."""
    x, y = _paired(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(np.sum(dx * dx))
    vy = float(np.sum(dy * dy))
    if vx == 0.0 or vy == 0.0:
        raise ZeroVariance("pearson is undefined for a constant vector")
    return float(np.sum(dx * dy) / np.sqrt(vx * vy))


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank range."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _paired(x, y)
    try:
        return pearson(_average_ranks(x), _average_ranks(y))
    except ZeroVariance:
        raise ZeroVariance("spearman is undefined when all values in a vector tie")


def kendall_tau_b(x, y) -> float:
    """Kendall tau with tie correction: (C - D) / sqrt((C+D+Tx)(C+D+Ty))."""
    x, y = _paired(x, y)
    c = d = tx = ty = 0
    for i in range(x.size - 1):
        dxs = x[i + 1:] - x[i]
        dys = y[i + 1:] - y[i]
        prod = dxs * dys
        c += int(np.count_nonzero(prod > 0))
        d += int(np.count_nonzero(prod < 0))
        tx += int(np.count_nonzero((dxs == 0) & (dys != 0)))
        ty += int(np.count_nonzero((dys == 0) & (dxs != 0)))
    denom = math.sqrt((c + d + tx) * (c + d + ty))
    if denom == 0.0:
        raise ZeroVariance("kendall tau is undefined when all pairs tie")
    return (c - d) / denom


@dataclass(frozen=True)
class SettingsSeries:
    """One row per dataset setting: downstream accuracy plus intrinsic signals."""

    names: tuple
    accuracy: np.ndarray
    consis: np.ndarray
    er_norm: np.ndarray
    rankme: np.ndarray | None = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) != len(set(names)):
            raise FormatError("setting names must be unique")
        vectors = {"accuracy": self.accuracy, "consis": self.consis, "er_norm": self.er_norm}
        if self.rankme is not None:
            vectors["rankme"] = self.rankme
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.size != len(names):
                raise FormatError(f"column {key} must have {len(names)} values")
            if not np.isfinite(arr).all():
                raise FormatError(f"column {key} contains non-finite values")
            object.__setattr__(self, key, arr)
        if len(names) < 2:
            raise FormatError("need at least 2 settings")
        object.__setattr__(self, "names", names)

    @classmethod
    def from_csv(cls, path) -> "SettingsSeries":
        """Columns: name, accuracy, consis, er_norm and optionally rankme."""
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            cols = [c.strip() for c in reader.fieldnames or []]
            required = ["name", "accuracy", "consis", "er_norm"]
            missing = [c for c in required if c not in cols]
            if missing:
                raise FormatError(f"missing columns {missing}", path=path, line=1)
            has_rankme = "rankme" in cols
            names, acc, con, er, rm = [], [], [], [], []
            for lineno, rec in enumerate(reader, start=2):
                try:
                    names.append(rec["name"].strip())
                    acc.append(float(rec["accuracy"]))
                    con.append(float(rec["consis"]))
                    er.append(float(rec["er_norm"]))
                    if has_rankme:
                        rm.append(float(rec["rankme"]))
                except (TypeError, ValueError) as e:
                    raise FormatError(f"bad value: {e}", path=path, line=lineno)
        try:
            return cls(tuple(names), np.asarray(acc), np.asarray(con), np.asarray(er),
                       np.asarray(rm) if has_rankme else None)
        except FormatError as e:
            raise FormatError(str(e), path=path)

    def iq(self, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> np.ndarray:
        return np.asarray([iq_score(c, e, alpha, beta)
                           for c, e in zip(self.consis, self.er_norm)])


def default_beta_grid(step: float = DEFAULT_BETA_GRID_STEP) -> np.ndarray:
    count = round(1.0 / step)
    return np.round(np.linspace(0.0, 1.0, count + 1), 10)


def beta_sweep(series: SettingsSeries, grid=None) -> list[dict]:
    """IQ-vs-accuracy correlation at each fusion weight beta (alpha = 1 - beta)."""
    grid = default_beta_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or grid.min() < 0 or grid.max() > 1:
        raise ValueError("beta grid values must lie in [0, 1]")
    rows = []
    for b in grid:
        scores = series.iq(alpha=1.0 - float(b), beta=float(b))
        rows.append({
            "beta": float(b),
            "spearman": spearman(scores, series.accuracy),
            "pearson": pearson(scores, series.accuracy),
        })
    return rows


@dataclass(frozen=True)
class RankAgreementReport:
    """Correlation and ranking agreement of each metric against accuracy."""

    rows: tuple  # (metric name, spearman, pearson, kendall)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rows": [
                {"metric": m, "spearman": s, "pearson": p, "kendall_tau": k}
                for m, s, p, k in self.rows
            ],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric", "spearman", "pearson", "kendall_tau"])
            for m, s, p, k in self.rows:
                w.writerow([m, f"{s:.6f}", f"{p:.6f}", f"{k:.6f}"])

    def row(self, metric: str) -> dict:
        for m, s, p, k in self.rows:
            if m == metric:
                return {"spearman": s, "pearson": p, "kendall_tau": k}
        raise KeyError(metric)


def rank_agreement_report(series: SettingsSeries,
                          alpha: float = DEFAULT_ALPHA,
                          beta: float = DEFAULT_BETA) -> RankAgreementReport:
    """Rows for er_only, consis_only, the fused score, and rankme if present."""
    columns = [
        ("er_only", series.er_norm),
        ("consis_only", series.consis),
        ("iq", series.iq(alpha, beta)),
    ]
    if series.rankme is not None:
        columns.append(("rankme", series.rankme))
    rows = tuple(
        (name, spearman(v, series.accuracy), pearson(v, series.accuracy),
         kendall_tau_b(v, series.accuracy))
        for name, v in columns
    )
    return RankAgreementReport(rows)
