"""Bottom-up hierarchical grouping over a proximity graph.

Starting from singletons, the grouper scans edges in ascending distance
order and merges two groups when the predicted relatedness clears a
threshold T and the edge distance clears the minimal-internal-distance bar.
T decays and the distance relaxation tau grows geometrically each pass, so
coarser levels emerge until everything is one group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .proximity import AREA_FLOOR, ProximityGraph, mid, union_bbox
from .relatedness import AssociationMatrix

Partition = Tuple[FrozenSet[str], ...]


class GroupingInputError(Exception):
    pass


@dataclass
class Group:
    """A set of member node indices with cached internal distance and bbox."""

    members: FrozenSet[int]
    internal: float
    bbox: Tuple[float, float, float, float]

    @property
    def size(self) -> float:
        x1, y1, x2, y2 = self.bbox
        return max((x2 - x1) * (y2 - y1), AREA_FLOOR)


def group_mid(a: Group, b: Group, tau: float) -> float:
    return mid(a.internal, a.size, b.internal, b.size, tau)


@dataclass(frozen=True)
class GroupingParams:
    t_initial: float = 0.9
    tau_initial: float = 0.02
    alpha: float = 0.9
    beta: float = 1.1
    max_iterations: int = 500
    t_floor: float = 1e-3  # below this, relatedness stops gating merges

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0 < self.beta:
            raise ValueError("need 0 < alpha < 1 < beta")
        if not 0.0 < self.t_initial <= 1.0:
            raise ValueError("T_initial must be in (0, 1]")
        if self.tau_initial <= 0:
            raise ValueError("tau_initial must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "T_initial": self.t_initial,
            "tau_initial": self.tau_initial,
            "alpha": self.alpha,
            "beta": self.beta,
        }


@dataclass(frozen=True)
class MergeEvent:
    iteration: int
    edge: Tuple[str, str]
    merged: FrozenSet[str]


@dataclass(frozen=True)
class GroupingHierarchy:
    """Levels H_0..H_l of strictly coarsening partitions (a laminar family)."""

    levels: Tuple[Partition, ...]
    params: GroupingParams
    provenance: Tuple[MergeEvent, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level(self, q: int) -> Partition:
        if not 0 <= q < len(self.levels):
            raise IndexError(f"level {q} outside 0..{self.depth}")
        return self.levels[q]

    def to_dict(self) -> dict:
        return {
            "levels": [sorted(sorted(g) for g in level) for level in self.levels],
            "params": self.params.to_dict(),
        }


def is_coarsening(fine: Partition, coarse: Partition) -> bool:
    """Every block of ``coarse`` must be a union of blocks of ``fine``."""
    lookup: Dict[str, FrozenSet[str]] = {}
    for block in coarse:
        for eid in block:
            lookup[eid] = block
    for block in fine:
        parents = {lookup.get(eid) for eid in block}
        if len(parents) != 1 or None in parents:
            return False
    return True


def is_laminar(levels: Sequence[Partition]) -> bool:
    """Any two groups across any levels are disjoint or nested."""
    groups = [set(g) for level in levels for g in level]
    for i, a in enumerate(groups):
        for b in groups[i + 1 :]:
            inter = a & b
            if inter and not (a <= b or b <= a):
                return False
    return True


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


def hierarchical_group(
    graph: ProximityGraph,
    relatedness: AssociationMatrix,
    params: Optional[GroupingParams] = None,
) -> GroupingHierarchy:
    """Run the merge loop; returns the recorded strictly-coarsening levels.

    Once T decays below ``t_floor`` the relatedness condition is treated as
    satisfied, so zero-score pairs cannot stall the loop forever.
    """
    params = params or GroupingParams()
    params.validate()
    if graph.ids != relatedness.ids:
        raise GroupingInputError("graph and association matrix ids differ")
    n = graph.n

    uf = _UnionFind(n)
    groups: Dict[int, Group] = {
        i: Group(members=frozenset([i]), internal=0.0, bbox=graph.bboxes[i])
        for i in range(n)
    }
    # ascending weight, ties by the index pair, so results are input-order free
    edges = sorted(graph.edges, key=lambda e: (e[2], e[0], e[1]))
    r = relatedness.scores

    def snapshot() -> Partition:
        blocks: Dict[int, List[str]] = {}
        for i in range(n):
            blocks.setdefault(uf.find(i), []).append(graph.ids[i])
        return tuple(frozenset(b) for b in blocks.values())

    levels: List[Partition] = [snapshot()]
    provenance: List[MergeEvent] = []
    t = params.t_initial
    tau = params.tau_initial
    count = n

    for iteration in range(1, params.max_iterations + 1):
        if count <= 1:
            break
        before = count
        for i, j, w in edges:
            ri, rj = uf.find(i), uf.find(j)
            if ri == rj:
                continue
            ga, gb = groups[ri], groups[rj]
            if t >= params.t_floor and r[i, j] < t:
                continue
            if w > group_mid(ga, gb, tau):
                continue
            root = uf.union(ri, rj)
            merged = Group(
                members=ga.members | gb.members,
                internal=max(ga.internal, gb.internal, w),
                bbox=union_bbox([ga.bbox, gb.bbox]),
            )
            groups.pop(ri)
            groups.pop(rj)
            groups[root] = merged
            count -= 1
            provenance.append(
                MergeEvent(
                    iteration=iteration,
                    edge=(graph.ids[i], graph.ids[j]),
                    merged=frozenset(graph.ids[m] for m in merged.members),
                )
            )
        if count < before:
            levels.append(snapshot())
        t *= params.alpha
        tau *= params.beta

    return GroupingHierarchy(
        levels=tuple(levels), params=params, provenance=tuple(provenance)
    )


def truncate(h: GroupingHierarchy, k: int) -> GroupingHierarchy:
    """Keep H_0 plus the top k-1 levels; coarsening and laminarity survive."""
    if not 1 <= k <= len(h.levels):
        raise IndexError(f"cannot truncate to {k} levels, have {len(h.levels)}")
    if k == 1:
        kept = (h.levels[0],)
    else:
        kept = (h.levels[0],) + h.levels[-(k - 1):]
    return GroupingHierarchy(levels=kept, params=h.params, provenance=h.provenance)
