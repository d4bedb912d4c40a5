"""Conditional independence tests with a common call signature for the PC search.

Each test is a callable ``test(data, x, y, S, alpha) -> CITestOutcome``.
Rows missing any of ``x``, ``y`` or ``S`` are dropped per call.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Protocol, Sequence

import networkx as nx
import numpy as np
from scipy.stats import norm

from .dataset import DataError, Dataset, complete_rows
from .estimator import InsufficientDataError, MarginModels, QuaccError, quacc_test
from .quantreg import BandwidthRule

log = logging.getLogger(__name__)


class CITestError(RuntimeError):
    pass


@dataclass(frozen=True)
class CITestOutcome:
    p_value: float
    statistic: float
    n_used: int
    independent: bool
    alpha: float


class CITest(Protocol):
    name: str

    def __call__(self, data: Dataset, x: str, y: str, S: Sequence[str], alpha: float) -> CITestOutcome:
        ...


def _check_pair(x: str, y: str, S: Sequence[str]) -> None:
    if x == y:
        raise CITestError("degenerate pair")
    if x in S or y in S:
        raise CITestError("conditioning set contains a tested variable")


def ci_quacc(
    data: Dataset,
    x: str,
    y: str,
    S: Sequence[str],
    tau: float,
    K: int = 5,
    alpha: float = 0.05,
    rng: np.random.Generator | int = 0,
    *,
    accept_on_insufficient: bool = False,
    bandwidth_rule: BandwidthRule = "hall_sheather",
    cache: dict[Hashable, MarginModels] | None = None,
) -> CITestOutcome:
    """QuACC independence test of ``x`` and ``y`` given ``S`` at level ``tau``."""
    _check_pair(x, y, S)
    try:
        res = quacc_test(
            data, y, x, tuple(S), tau, K, rng, alpha, bandwidth_rule=bandwidth_rule, cache=cache
        )
    except InsufficientDataError as exc:
        if not accept_on_insufficient:
            raise CITestError(str(exc)) from exc
        n = int(complete_rows(data, [x, y, *S]).sum())
        log.warning("accepting %s _||_ %s | %s on insufficient data: %s", x, y, list(S), exc)
        return CITestOutcome(1.0, 0.0, n, True, alpha)
    except QuaccError as exc:
        raise CITestError(str(exc)) from exc
    return CITestOutcome(res.p_value, res.z, res.n_effective, res.p_value >= alpha, alpha)


def partial_correlation(data: Dataset, x: str, y: str, S: Sequence[str]) -> tuple[float, int]:
    """Partial correlation of ``x`` and ``y`` given ``S`` from regression residuals."""
    names = [x, y, *S]
    try:
        keep = complete_rows(data, names)
    except DataError as exc:
        raise CITestError(str(exc)) from exc
    vals = data.matrix(names)[keep]
    n = vals.shape[0]
    if n <= len(S) + 3:
        raise CITestError(f"need more than {len(S) + 3} complete rows, got {n}")
    design = np.column_stack([np.ones(n), vals[:, 2:]])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise CITestError("singular covariance: conditioning set is collinear")
    coef, *_ = np.linalg.lstsq(design, vals[:, :2], rcond=None)
    resid = vals[:, :2] - design @ coef
    ss = np.sum(resid**2, axis=0)
    if np.any(ss <= 1e-12 * np.sum((vals[:, :2] - vals[:, :2].mean(0)) ** 2, axis=0)):
        raise CITestError("singular covariance: variable determined by the conditioning set")
    r = float(resid[:, 0] @ resid[:, 1] / math.sqrt(ss[0] * ss[1]))
    return max(-1.0, min(1.0, r)), n


def ci_partial_corr(data: Dataset, x: str, y: str, S: Sequence[str], alpha: float = 0.05) -> CITestOutcome:
    """Fisher-z test of zero partial correlation."""
    _check_pair(x, y, S)
    r, n = partial_correlation(data, x, y, S)
    with np.errstate(divide="ignore"):
        stat = math.sqrt(n - len(S) - 3) * float(np.arctanh(r))
    p = float(min(1.0, 2.0 * norm.sf(abs(stat))))
    return CITestOutcome(p, stat, n, p >= alpha, alpha)


@dataclass
class QuaccTest:
    """QuACC CI test at a fixed quantile level, memoising quantile fits across calls.

    The memo is tied to one dataset; call :meth:`reset` (or build a new
    instance) before testing a different one.
    """

    tau: float
    K: int = 5
    seed: int = 0
    accept_on_insufficient: bool = False
    bandwidth_rule: BandwidthRule = "hall_sheather"
    _cache: dict = field(default_factory=dict, repr=False)
    _data_id: int | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return f"quacc(tau={self.tau:g})"

    def reset(self) -> None:
        self._cache.clear()
        self._data_id = None

    def __call__(self, data: Dataset, x: str, y: str, S: Sequence[str], alpha: float) -> CITestOutcome:
        if self._data_id != id(data):
            self._cache.clear()
            self._data_id = id(data)
        return ci_quacc(
            data,
            x,
            y,
            S,
            self.tau,
            self.K,
            alpha,
            self.seed,
            accept_on_insufficient=self.accept_on_insufficient,
            bandwidth_rule=self.bandwidth_rule,
            cache=self._cache,
        )


@dataclass
class PartialCorrTest:
    name: str = "pcorr"

    def __call__(self, data: Dataset, x: str, y: str, S: Sequence[str], alpha: float) -> CITestOutcome:
        return ci_partial_corr(data, x, y, S, alpha)


class DSeparationOracle:
    """Answers CI queries by d-separation in a known DAG (p = 1 if separated, else 0)."""

    name = "dsep"

    def __init__(self, edges: Iterable[tuple[str, str]], nodes: Iterable[str] = ()):
        self.dag = nx.DiGraph()
        self.dag.add_nodes_from(nodes)
        self.dag.add_edges_from(edges)
        if not nx.is_directed_acyclic_graph(self.dag):
            raise CITestError("oracle graph must be acyclic")
        self.calls = 0

    def __call__(self, data: Dataset | None, x: str, y: str, S: Sequence[str], alpha: float) -> CITestOutcome:
        _check_pair(x, y, S)
        self.calls += 1
        sep = nx.is_d_separator(self.dag, {x}, {y}, set(S))
        return CITestOutcome(1.0 if sep else 0.0, 0.0, 0, sep, alpha)
