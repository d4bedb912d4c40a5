"""Skeleton recovery scores, rejection curves and table emitters."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RecoveryMetrics:
    precision: float
    recall: float
    shd_normalized: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


def recovery(est, truth) -> RecoveryMetrics:
    """Score an estimated skeleton against the true undirected edge set.

    ``est`` and ``truth`` need ``vertices`` and ``edges`` (a set of
    two-element frozensets).
    """
    if set(est.vertices) != set(truth.vertices):
        raise MetricsError("estimated and true graphs have different vertex sets")
    e, t = set(est.edges), set(truth.edges)
    tp, fp, fn = len(e & t), len(e - t), len(t - e)
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if not t else 0.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    p = len(truth.vertices)
    pairs = p * (p - 1) // 2
    shd = (fp + fn) / pairs if pairs else 0.0
    return RecoveryMetrics(precision, recall, shd, tp, fp, fn)


def rejection_curve(results: Iterable[tuple[float, bool]]) -> list[tuple[float, float]]:
    """Group ``(theta, rejected)`` pairs by theta and return sorted rejection rates."""
    groups: dict[float, list[bool]] = defaultdict(list)
    for theta, rejected in results:
        groups[float(theta)].append(bool(rejected))
    if not groups:
        raise MetricsError("no results")
    return [(th, float(np.mean(groups[th]))) for th in sorted(groups)]


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), sd


@dataclass(frozen=True)
class RecoveryRow:
    n: int
    tau: float | None
    backend: str
    replicates: int
    precision: tuple[float, float]
    recall: tuple[float, float]
    shd: tuple[float, float]


def summarize_recovery(
    scores: Sequence[RecoveryMetrics], n: int, tau: float | None, backend: str
) -> RecoveryRow:
    if not scores:
        raise MetricsError("no scores to summarize")
    return RecoveryRow(
        n,
        tau,
        backend,
        len(scores),
        mean_sd([s.precision for s in scores]),
        mean_sd([s.recall for s in scores]),
        mean_sd([s.shd_normalized for s in scores]),
    )


RECOVERY_COLUMNS = (
    "n",
    "tau",
    "backend",
    "replicates",
    "precision_mean",
    "precision_sd",
    "recall_mean",
    "recall_sd",
    "shd_mean",
    "shd_sd",
)


def _row_values(r: RecoveryRow) -> list:
    return [
        r.n,
        "" if r.tau is None else r.tau,
        r.backend,
        r.replicates,
        *r.precision,
        *r.recall,
        *r.shd,
    ]


def recovery_csv(rows: Sequence[RecoveryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECOVERY_COLUMNS)
    for r in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in _row_values(r)])
    return buf.getvalue()


def recovery_text(rows: Sequence[RecoveryRow]) -> str:
    """Aligned table with ``mean (sd)`` cells, one line per (n, tau, backend)."""
    header = ("n", "tau", "backend", "Precision", "Recall", "SHD")
    body = [
        (
            str(r.n),
            "-" if r.tau is None else f"{r.tau:g}",
            r.backend,
            f"{r.precision[0]:.3f} ({r.precision[1]:.3f})",
            f"{r.recall[0]:.3f} ({r.recall[1]:.3f})",
            f"{r.shd[0]:.3f} ({r.shd[1]:.3f})",
        )
        for r in rows
    ]
    return _align([header, *body])


def curve_csv(curves: Mapping[str, Sequence[tuple[float, float]]], key: str = "theta") -> str:
    """Long-format CSV with columns ``series, <key>, rate``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", key, "rate"])
    for name, pts in curves.items():
        for x, rate in pts:
            w.writerow([name, f"{x:.6g}", f"{rate:.6g}"])
    return buf.getvalue()


def matrix_csv(names: Sequence[str], values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *names])
    for name, row in zip(names, values):
        w.writerow([name, *("" if math.isnan(v) else f"{v:.6g}" for v in row)])
    return buf.getvalue()


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
