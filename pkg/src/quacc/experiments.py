"""Seeded simulation harnesses: rejection-rate grids and skeleton-recovery benchmarks.

Replicate ``r`` draws its data from ``SeedSequence([seed, r])`` and derives
the fold seed from the same stream, so results do not depend on the worker
count or scheduling. The same replicate seed is reused across copula
parameters and quantile levels (common random numbers), which keeps the
curves smooth.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .citest import CITestError, PartialCorrTest, QuaccTest
from .estimator import QuaccError, quacc_test
from .metrics import RecoveryMetrics, RecoveryRow, recovery, rejection_curve, summarize_recovery
from .pc import pc_skeleton
from .synth import gen_graph, gen_pairwise

log = logging.getLogger(__name__)


def default_workers() -> int:
    env = os.environ.get("QUACC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer QUACC_THREADS=%r", env)
    return os.cpu_count() or 1


def run_pool(fn: Callable, tasks: Sequence, workers: int | None = None) -> list:
    """Map ``fn`` over ``tasks`` in order, in-process when one worker suffices."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def replicate_streams(seed: int, rep: int) -> tuple[np.random.Generator, int]:
    """Data generator and integer fold seed for one replicate."""
    ss = np.random.SeedSequence([seed, rep])
    data_ss, fold_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(fold_ss.generate_state(1)[0])


@dataclass(frozen=True)
class RejectionConfig:
    setting: str = "S1"
    n: int = 400
    thetas: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    taus: tuple[float, ...] = (0.9,)
    replicates: int = 100
    alpha: float = 0.05
    K: int = 5
    seed: int = 0
    workers: int | None = None


@dataclass(frozen=True)
class RejectionRecord:
    setting: str
    theta: float
    tau: float
    rep: int
    rejected: bool
    p_value: float
    rho_hat: float
    error: str = ""


def _rejection_task(args) -> list[RejectionRecord]:
    cfg, theta, rep = args
    rng, fold_seed = replicate_streams(cfg.seed, rep)
    data, _ = gen_pairwise(cfg.setting, cfg.n, rng, theta=theta)
    out = []
    for tau in cfg.taus:
        try:
            res = quacc_test(data, "Y", "X", ("Z1", "Z2"), tau, cfg.K, fold_seed, cfg.alpha)
            out.append(RejectionRecord(cfg.setting, theta, tau, rep, res.rejected, res.p_value, res.rho_hat))
        except QuaccError as exc:
            out.append(RejectionRecord(cfg.setting, theta, tau, rep, False, float("nan"), float("nan"), str(exc)))
    return out


def run_rejection_grid(cfg: RejectionConfig) -> list[RejectionRecord]:
    tasks = [(cfg, float(th), r) for th in cfg.thetas for r in range(cfg.replicates)]
    return [rec for chunk in run_pool(_rejection_task, tasks, cfg.workers) for rec in chunk]


def rejection_rates(records: Iterable[RejectionRecord], by: str = "theta") -> dict[str, list[tuple[float, float]]]:
    """Rejection curves keyed by the other grid axis; failed replicates are excluded."""
    other = "tau" if by == "theta" else "theta"
    series: dict[str, list[tuple[float, bool]]] = {}
    for rec in records:
        if rec.error:
            continue
        key = f"{rec.setting} {other}={getattr(rec, other):g}"
        series.setdefault(key, []).append((getattr(rec, by), rec.rejected))
    return {k: rejection_curve(v) for k, v in series.items()}


@dataclass(frozen=True)
class GraphBenchConfig:
    n: int = 5000
    taus: tuple[float, ...] = (0.1, 0.5, 0.9)
    backends: tuple[str, ...] = ("quacc", "pcorr")
    replicates: int = 20
    mean_effects: bool = False
    alpha: float = 0.05
    K: int = 5
    seed: int = 0
    max_order: int | None = None
    workers: int | None = None


@dataclass(frozen=True)
class GraphRecord:
    rep: int
    backend: str
    tau: float | None
    metrics: RecoveryMetrics | None
    edges: tuple[tuple[str, str], ...] = ()
    error: str = ""


def _graph_task(args) -> list[GraphRecord]:
    cfg, rep = args
    rng, fold_seed = replicate_streams(cfg.seed, rep)
    data, truth, _ = gen_graph(cfg.n, cfg.mean_effects, rng)
    runs: list[tuple[str, float | None, object]] = []
    for backend in cfg.backends:
        if backend == "quacc":
            runs += [("quacc", tau, QuaccTest(tau, cfg.K, fold_seed)) for tau in cfg.taus]
        elif backend == "pcorr":
            runs.append(("pcorr", None, PartialCorrTest()))
        else:
            raise ValueError(f"unknown backend {backend!r}")
    out = []
    for backend, tau, test in runs:
        try:
            sk = pc_skeleton(data, data.names, test, cfg.alpha, cfg.max_order)
        except CITestError as exc:
            out.append(GraphRecord(rep, backend, tau, None, error=str(exc)))
            continue
        out.append(GraphRecord(rep, backend, tau, recovery(sk, truth), tuple(sk.edge_list())))
    return out


def run_graph_bench(cfg: GraphBenchConfig) -> list[GraphRecord]:
    tasks = [(cfg, r) for r in range(cfg.replicates)]
    return [rec for chunk in run_pool(_graph_task, tasks, cfg.workers) for rec in chunk]


def summarize_graph(records: Sequence[GraphRecord], n: int) -> list[RecoveryRow]:
    keys: list[tuple[str, float | None]] = []
    for rec in records:
        if (rec.backend, rec.tau) not in keys:
            keys.append((rec.backend, rec.tau))
    rows = []
    for backend, tau in keys:
        scores = [r.metrics for r in records if r.backend == backend and r.tau == tau and r.metrics]
        if scores:
            rows.append(summarize_recovery(scores, n, tau, backend))
    return rows


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
