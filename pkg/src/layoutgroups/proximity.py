"""Neighborhood graph over a layout plus the grouping distance primitives.

Edges come from a Delaunay triangulation of bbox centers and are weighted by
the minimal gap between axis-aligned bounding boxes, so a large panel is
close to the items sitting on it. The result is always connected.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .model import Layout, VisualElement

AREA_FLOOR = 1e-4


class DisconnectedGroup(Exception):
    """Raised when a group's induced subgraph is not connected."""


def distance(a: VisualElement, b: VisualElement) -> float:
    """Minimal gap between two axis-aligned bboxes; 0 when they touch."""
    return bbox_gap(a.bbox, b.bbox)


def bbox_gap(
    a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]
) -> float:
    dx = max(0.0, max(a[0], b[0]) - min(a[2], b[2]))
    dy = max(0.0, max(a[1], b[1]) - min(a[3], b[3]))
    return float(np.hypot(dx, dy))


@dataclass(frozen=True)
class ProximityGraph:
    """Elements as nodes; undirected weighted neighborhood edges.

    ``edges`` hold index pairs (i < j) into ``ids``; bboxes are retained so
    the grouper can maintain union bounding boxes.
    """

    ids: Tuple[str, ...]
    bboxes: Tuple[Tuple[float, float, float, float], ...]
    edges: Tuple[Tuple[int, int, float], ...]

    @property
    def n(self) -> int:
        return len(self.ids)

    def adjacency(self) -> List[List[Tuple[int, float]]]:
        adj: List[List[Tuple[int, float]]] = [[] for _ in range(self.n)]
        for i, j, w in self.edges:
            adj[i].append((j, w))
            adj[j].append((i, w))
        return adj

    def edge_dump(self) -> List[dict]:
        return [
            {"a": self.ids[i], "b": self.ids[j], "weight": w}
            for i, j, w in self.edges
        ]


def _delaunay_pairs(centers: np.ndarray) -> set:
    """Neighbor index pairs from a Delaunay triangulation of the centers.

    Duplicate points are merged before triangulating and re-attached to their
    representative afterwards; degenerate inputs fall back to chaining points
    in lexicographic order.
    """
    n = len(centers)
    pairs = set()
    if n <= 3:
        return {(i, j) for i, j in combinations(range(n), 2)}
    unique, inverse = np.unique(centers, axis=0, return_inverse=True)
    rep: Dict[int, int] = {}
    for idx, u in enumerate(inverse):
        rep.setdefault(int(u), idx)
    for idx, u in enumerate(inverse):
        r = rep[int(u)]
        if r != idx:
            pairs.add((min(r, idx), max(r, idx)))
    try:
        if len(unique) < 4:
            raise QhullError("too few unique points")
        tri = Delaunay(unique)
        for simplex in tri.simplices:
            for a, b in combinations(simplex, 2):
                i, j = rep[int(a)], rep[int(b)]
                if i != j:
                    pairs.add((min(i, j), max(i, j)))
    except QhullError:
        # collinear or near-degenerate: chain in lexicographic center order
        order = sorted(rep.values(), key=lambda i: (centers[i][0], centers[i][1], i))
        for a, b in zip(order, order[1:]):
            pairs.add((min(a, b), max(a, b)))
    return pairs


def build_graph(layout: Layout) -> ProximityGraph:
    """Delaunay neighborhood graph over bbox centers, gap-weighted, connected."""
    elements = layout.elements
    centers = np.array([e.center for e in elements])
    pairs = _delaunay_pairs(centers)
    edges = [(i, j, distance(elements[i], elements[j])) for i, j in sorted(pairs)]

    # repair connectivity if the fallback path left separate components
    parent = list(range(len(elements)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j, _ in edges:
        parent[find(i)] = find(j)
    while True:
        roots = {find(i) for i in range(len(elements))}
        if len(roots) <= 1:
            break
        comps: Dict[int, List[int]] = {}
        for i in range(len(elements)):
            comps.setdefault(find(i), []).append(i)
        groups = sorted(comps.values(), key=lambda g: g[0])
        base = groups[0]
        best = None
        for other in groups[1:]:
            for i in base:
                for j in other:
                    w = distance(elements[i], elements[j])
                    cand = (w, min(i, j), max(i, j))
                    if best is None or cand < best:
                        best = cand
        w, i, j = best
        edges.append((i, j, w))
        parent[find(i)] = find(j)

    return ProximityGraph(
        ids=layout.ids,
        bboxes=tuple(e.bbox for e in elements),
        edges=tuple(sorted(edges)),
    )


def internal_distance(members: Iterable[int], graph: ProximityGraph) -> float:
    """Largest edge weight on the MST of the induced subgraph (0 for singletons)."""
    members = sorted(set(members))
    if len(members) <= 1:
        return 0.0
    member_set = set(members)
    induced = sorted(
        ((w, i, j) for i, j, w in graph.edges if i in member_set and j in member_set)
    )
    parent = {i: i for i in members}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    largest = 0.0
    merged = 0
    for w, i, j in induced:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            largest = max(largest, w)
            merged += 1
            if merged == len(members) - 1:
                return largest
    raise DisconnectedGroup(f"group {members} is not connected in the graph")


def union_bbox(
    bboxes: Iterable[Tuple[float, float, float, float]]
) -> Tuple[float, float, float, float]:
    arr = np.array(list(bboxes))
    return (
        float(arr[:, 0].min()), float(arr[:, 1].min()),
        float(arr[:, 2].max()), float(arr[:, 3].max()),
    )


def group_size(members: Iterable[int], graph: ProximityGraph) -> float:
    """Union-bbox area of the members, floored at a small epsilon."""
    x1, y1, x2, y2 = union_bbox(graph.bboxes[i] for i in members)
    return max((x2 - x1) * (y2 - y1), AREA_FLOOR)


def mid(
    int_a: float, size_a: float, int_b: float, size_b: float, tau: float
) -> float:
    """Minimal internal distance: the merge bar for two groups."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return min(int_a + tau / size_a, int_b + tau / size_b)
