"""Copula samplers and the synthetic data-generating processes.

Pairwise settings S1-S3 share location/scale quantile-function marginals
driven by a truncated-normal ``Z1`` and a Bernoulli ``Z2``; they differ in
the copula linking the two uniforms. The graph setting is a ten-variable
system where parents act on children through tail-indicator terms.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy.stats import norm

from .dataset import Dataset

Family = Literal["clayton", "flipped_clayton", "plackett", "independence"]


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class CopulaSpec:
    family: Family
    theta: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in ("clayton", "flipped_clayton", "plackett", "independence"):
            raise SynthError(f"unknown copula family {self.family!r}")
        if self.family in ("clayton", "flipped_clayton") and not self.theta >= 0:
            raise SynthError("Clayton theta must be >= 0 (0 is the independence limit)")
        if self.family == "plackett" and not self.theta > 0:
            raise SynthError("Plackett theta must be > 0")


def clayton_cdf(u: float, v: float, theta: float) -> float:
    if not (0 < u <= 1 and 0 < v <= 1):
        raise SynthError("u and v must lie in (0, 1]")
    if theta <= 0:
        if theta == 0:
            return u * v
        raise SynthError("theta must be positive")
    return max(u ** (-theta) + v ** (-theta) - 1.0, 0.0) ** (-1.0 / theta)


def plackett_cdf(u: float, v: float, theta: float) -> float:
    if theta <= 0:
        raise SynthError("theta must be positive")
    if abs(theta - 1.0) < 1e-12:
        return u * v
    s = 1.0 + (theta - 1.0) * (u + v)
    return (s - math.sqrt(s * s - 4.0 * u * v * theta * (theta - 1.0))) / (2.0 * (theta - 1.0))


def _clayton(n: int, theta: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    if theta == 0:
        return u, w
    # invert the conditional CDF of V given U = u
    v = (u ** (-theta) * (w ** (-theta / (1.0 + theta)) - 1.0) + 1.0) ** (-1.0 / theta)
    return u, v


def _plackett(n: int, theta: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    if abs(theta - 1.0) < 1e-12:
        return u, w
    a = w * (1.0 - w)
    b = theta + a * (theta - 1.0) ** 2
    c = 2.0 * a * (u * theta**2 + 1.0 - u) + theta * (1.0 - 2.0 * a)
    disc = theta * (theta + 4.0 * a * u * (1.0 - u) * (1.0 - theta) ** 2)
    d = np.sqrt(np.maximum(disc, 0.0))
    v = (c - (1.0 - 2.0 * w) * d) / (2.0 * b)
    return u, np.clip(v, 0.0, 1.0)


def sample_copula(spec: CopulaSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise SynthError("n must be >= 1")
    if spec.family == "independence":
        return rng.uniform(size=n), rng.uniform(size=n)
    if spec.family == "clayton":
        return _clayton(n, spec.theta, rng)
    if spec.family == "flipped_clayton":
        u, v = _clayton(n, spec.theta, rng)
        return 1.0 - u, 1.0 - v
    return _plackett(n, spec.theta, rng)


def trunc_normal(rng: np.random.Generator, lo: float = -2.0, hi: float = 2.0, size=None):
    """Standard normal restricted to ``(lo, hi)`` by inverse-CDF sampling."""
    if not lo < hi:
        raise SynthError("lo must be below hi")
    a, b = norm.cdf(lo), norm.cdf(hi)
    out = norm.ppf(a + rng.uniform(size=size) * (b - a))
    return np.clip(out, np.nextafter(lo, hi), np.nextafter(hi, lo))


@dataclass(frozen=True)
class DgpSpec:
    setting: str
    n: int
    seed: int | None = None
    alphas: tuple[float, ...] = ()
    betas: tuple[float, ...] = ()
    gammas: tuple[float, ...] = ()
    copulas: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"], d["betas"], d["gammas"] = list(self.alphas), list(self.betas), list(self.gammas)
        return d


@dataclass(frozen=True)
class TrueGraph:
    vertices: tuple[str, ...]
    edges: frozenset

    def to_dict(self) -> dict:
        pos = {v: i for i, v in enumerate(self.vertices)}
        edges = sorted((sorted(e, key=pos.__getitem__) for e in self.edges), key=lambda e: (pos[e[0]], pos[e[1]]))
        return {"vertices": list(self.vertices), "edges": edges}


PAIRWISE_ALPHAS = {
    "S1": (0.25, 0.25, 0.0, 0.0),
    "S2": (0.25, 0.25, 1.0, 0.5),
    "S3": (0.25, 0.25, 1.0, 0.5),
}
PAIRWISE_THETA = {"S1": math.exp(1.42), "S2": 1.0, "S3": 1.0}


def pairwise_copulas(setting: str, theta: float) -> tuple[CopulaSpec, CopulaSpec]:
    """Copulas used when ``Z2 = 1`` and ``Z2 = 0``."""
    if setting == "S1":
        c = CopulaSpec("plackett", theta)
        return c, c
    if setting == "S2":
        return CopulaSpec("flipped_clayton", theta), CopulaSpec("independence")
    if setting == "S3":
        return CopulaSpec("flipped_clayton", theta), CopulaSpec("clayton", theta)
    raise SynthError(f"unknown pairwise setting {setting!r}")


def pairwise_quantiles(u_y, u_x, z1, z2, alphas=(0.25, 0.25, 0.0, 0.0)):
    """Apply the conditional quantile functions of Y and X to copula uniforms."""
    a1, a2, a3, a4 = alphas
    gy = norm.ppf(u_y)
    y = 0.2 * gy + a1 * z1 + a2 * (0.4 * gy - 0.2 * gy) * z2
    x = 0.3 * norm.ppf(u_x) - a3 * z1 + a4 * z2
    return y, x


def gen_pairwise(
    setting: str,
    n: int,
    rng: np.random.Generator,
    theta: float | None = None,
    alphas: tuple[float, float, float, float] | None = None,
) -> tuple[Dataset, DgpSpec]:
    """Draw ``n`` rows of (Y, X, Z1, Z2) from setting S1, S2 or S3."""
    if setting not in PAIRWISE_ALPHAS:
        raise SynthError(f"unknown pairwise setting {setting!r}")
    if n < 1:
        raise SynthError("n must be >= 1")
    theta = PAIRWISE_THETA[setting] if theta is None else float(theta)
    alphas = PAIRWISE_ALPHAS[setting] if alphas is None else tuple(alphas)
    on, off = pairwise_copulas(setting, theta)
    z1 = trunc_normal(rng, -2.0, 2.0, n)
    z2 = (rng.uniform(size=n) < 0.5).astype(float)
    u1, v1 = sample_copula(on, n, rng)
    u0, v0 = sample_copula(off, n, rng)
    u_y = np.where(z2 == 1, u1, u0)
    u_x = np.where(z2 == 1, v1, v0)
    u_y = np.clip(u_y, 1e-15, 1 - 1e-15)
    u_x = np.clip(u_x, 1e-15, 1 - 1e-15)
    y, x = pairwise_quantiles(u_y, u_x, z1, z2, alphas)
    data = Dataset(("Y", "X", "Z1", "Z2"), np.column_stack([y, x, z1, z2]))
    spec = DgpSpec(
        setting,
        n,
        alphas=alphas,
        copulas={"Z2=1": asdict(on), "Z2=0": asdict(off)},
    )
    return data, spec


GRAPH_VERTICES = ("Z", "U", "Q", "Y", "X", "W", "V", "T", "S", "R")
# child -> parents, in coefficient order 1..9
GRAPH_TERMS = (
    ("Y", "Z"),
    ("X", "Z"),
    ("W", "X"),
    ("W", "Y"),
    ("V", "W"),
    ("T", "U"),
    ("S", "U"),
    ("R", "T"),
    ("R", "W"),
)
GRAPH_EDGES = frozenset(frozenset(t) for t in GRAPH_TERMS)


def graph_truth() -> TrueGraph:
    return TrueGraph(GRAPH_VERTICES, GRAPH_EDGES)


def _tail_term(parent: np.ndarray, a: float, b: float, g: float) -> np.ndarray:
    hi = np.quantile(parent, 0.9)
    lo = np.quantile(parent, 0.1)
    return a * parent + b * parent * (parent >= hi) + g * parent * (parent <= lo)


def gen_graph(
    n: int,
    with_mean_effects: bool,
    rng: np.random.Generator,
    *,
    alphas: np.ndarray | None = None,
    betas: np.ndarray | None = None,
    gammas: np.ndarray | None = None,
    seed: int | None = None,
) -> tuple[Dataset, TrueGraph, DgpSpec]:
    """Ten-variable tail-dependence system.

    Each of the nine parent-child terms contributes
    ``a*P + b*P*1{P >= q90(P)} + g*P*1{P <= q10(P)}`` with sample quantiles
    of the realised parent column. The T and S equations use U in both tail
    terms, and R's lower-tail term uses T.
    """
    if n < 1:
        raise SynthError("n must be >= 1")
    m = len(GRAPH_TERMS)
    b = rng.uniform(0.3, 0.8, m) if betas is None else np.asarray(betas, dtype=float)
    g = rng.uniform(0.3, 0.8, m) if gammas is None else np.asarray(gammas, dtype=float)
    if alphas is not None:
        a = np.asarray(alphas, dtype=float)
    elif with_mean_effects:
        a = rng.uniform(-0.4, 0.4, m)
    else:
        a = np.zeros(m)
    cols: dict[str, np.ndarray] = {}
    for root in ("Z", "U", "Q"):
        cols[root] = trunc_normal(rng, -2.0, 2.0, n)
    for child in ("Y", "X", "W", "V", "T", "S", "R"):
        val = rng.normal(size=n)
        for i, (c, parent) in enumerate(GRAPH_TERMS):
            if c == child:
                val = val + _tail_term(cols[parent], a[i], b[i], g[i])
        cols[child] = val
    data = Dataset(GRAPH_VERTICES, np.column_stack([cols[v] for v in GRAPH_VERTICES]))
    spec = DgpSpec(
        "graph",
        n,
        seed=seed,
        alphas=tuple(float(v) for v in a),
        betas=tuple(float(v) for v in b),
        gammas=tuple(float(v) for v in g),
        notes="terms in order: " + ", ".join(f"{p}->{c}" for c, p in GRAPH_TERMS),
    )
    return data, graph_truth(), spec
