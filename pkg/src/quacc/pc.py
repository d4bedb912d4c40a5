"""Adjacency phase of the PC algorithm and majority voting over replicate skeletons."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

from .citest import CITest, CITestError
from .dataset import Dataset

log = logging.getLogger(__name__)

Pair = frozenset


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    vertices: tuple[str, ...]
    edges: frozenset  # of frozenset({a, b})
    sepsets: dict = field(default_factory=dict, compare=False)  # frozenset pair -> tuple
    alpha: float | None = None
    test_id: str = ""

    def __post_init__(self) -> None:
        verts = set(self.vertices)
        for e in self.edges:
            if len(e) != 2 or not set(e) <= verts:
                raise SkeletonError(f"invalid edge {sorted(e)}")

    def has_edge(self, a: str, b: str) -> bool:
        return Pair((a, b)) in self.edges

    def edge_list(self) -> list[tuple[str, str]]:
        pos = {v: i for i, v in enumerate(self.vertices)}
        out = [tuple(sorted(e, key=pos.__getitem__)) for e in self.edges]
        return sorted(out, key=lambda e: (pos[e[0]], pos[e[1]]))

    def neighbors(self, v: str) -> list[str]:
        return [u for u in self.vertices if u != v and self.has_edge(u, v)]

    def to_dict(self) -> dict:
        pos = {v: i for i, v in enumerate(self.vertices)}
        seps = []
        for pair, S in self.sepsets.items():
            a, b = sorted(pair, key=pos.__getitem__)
            seps.append({"pair": [a, b], "sepset": list(S)})
        seps.sort(key=lambda d: (pos[d["pair"][0]], pos[d["pair"][1]]))
        return {
            "vertices": list(self.vertices),
            "edges": [list(e) for e in self.edge_list()],
            "sepsets": seps,
            "alpha": self.alpha,
            "test": self.test_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        edges = frozenset(Pair(e) for e in d["edges"])
        seps = {Pair(s["pair"]): tuple(s["sepset"]) for s in d.get("sepsets", [])}
        return cls(tuple(d["vertices"]), edges, seps, d.get("alpha"), d.get("test", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self, name: str = "skeleton") -> str:
        lines = [f"graph {_dot_id(name)} {{"]
        lines += [f"  {_dot_id(v)};" for v in self.vertices]
        lines += [f"  {_dot_id(a)} -- {_dot_id(b)};" for a, b in self.edge_list()]
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def complete_skeleton(vertices: Sequence[str]) -> Skeleton:
    return Skeleton(tuple(vertices), frozenset(Pair(p) for p in combinations(vertices, 2)))


def pc_skeleton(
    data: Dataset | None,
    variables: Sequence[str],
    test: CITest,
    alpha: float = 0.05,
    max_order: int | None = None,
) -> Skeleton:
    """Estimate the undirected skeleton by stable-PC edge deletion.

    Adjacency sets are frozen at the start of each conditioning order, so the
    result does not depend on the order in which pairs are visited. Within a
    pair, conditioning sets are tried in lexicographic order of the vertex
    list, first from one endpoint's neighbourhood then the other's, and the
    first accepted independence removes the edge.
    """
    variables = tuple(variables)
    if len(variables) < 2:
        raise SkeletonError("need at least two variables")
    if len(set(variables)) != len(variables):
        raise SkeletonError("duplicate variable names")
    if max_order is None:
        max_order = len(variables) - 2
    if max_order < 0:
        raise SkeletonError("max_order must be non-negative")

    adj = {v: {u for u in variables if u != v} for v in variables}
    sepsets: dict[frozenset, tuple[str, ...]] = {}
    order = 0
    while order <= max_order:
        frozen = {v: [u for u in variables if u in adj[v]] for v in variables}
        pairs = [
            (a, b)
            for a, b in combinations(variables, 2)
            if b in adj[a] and (len(frozen[a]) - 1 >= order or len(frozen[b]) - 1 >= order)
        ]
        if not pairs:
            break
        removals = []
        for a, b in pairs:
            tried: set[tuple[str, ...]] = set()
            found = None
            for u, v in ((a, b), (b, a)):
                candidates = [w for w in frozen[u] if w != v]
                for S in combinations(candidates, order):
                    if S in tried:
                        continue
                    tried.add(S)
                    try:
                        outcome = test(data, u, v, S, alpha)
                    except CITestError as exc:
                        raise CITestError(f"testing {u} _||_ {v} | {list(S)}: {exc}") from exc
                    if outcome.independent:
                        found = S
                        break
                if found is not None:
                    break
            if found is not None:
                removals.append((a, b, found))
        for a, b, S in removals:
            adj[a].discard(b)
            adj[b].discard(a)
            sepsets[Pair((a, b))] = S
        log.debug("order %d: removed %d edges", order, len(removals))
        order += 1

    edges = frozenset(Pair((a, b)) for a, b in combinations(variables, 2) if b in adj[a])
    return Skeleton(variables, edges, sepsets, alpha, getattr(test, "name", type(test).__name__))


def majority_vote(skeletons: Iterable[Skeleton]) -> Skeleton:
    """Keep edges present in strictly more than half of the skeletons."""
    skeletons = list(skeletons)
    if not skeletons:
        raise SkeletonError("no skeletons to vote over")
    verts = skeletons[0].vertices
    for s in skeletons[1:]:
        if set(s.vertices) != set(verts):
            raise SkeletonError("skeletons have different vertex sets")
    counts = Counter(e for s in skeletons for e in s.edges)
    kept = frozenset(e for e, c in counts.items() if 2 * c > len(skeletons))
    return Skeleton(verts, kept, {}, skeletons[0].alpha, f"majority({len(skeletons)})")
