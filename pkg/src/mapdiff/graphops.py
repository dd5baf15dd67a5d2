"""Graph utilities shared by tracing, masking, and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Bbox, GeoTransform, Proposal, RoadGraph, bbox_of_points


@dataclass
class SubgraphSelection:
    """A subset of a parent graph's edges, with its tight bounding box."""

    parent: RoadGraph
    edges: list[tuple[int, int]]
    bbox: Bbox = field(init=False)

    def __post_init__(self) -> None:
        for e in self.edges:
            if not self.parent.has_edge(*e):
                raise ValueError(f"selected edge {e} not present in parent graph")
        if self.edges:
            idx = np.unique(np.asarray(self.edges, dtype=np.int64))
            self.bbox = bbox_of_points(self.parent.vertices[idx])
        else:
            self.bbox = (0.0, 0.0, 0.0, 0.0)

    def segments(self) -> np.ndarray:
        """(n, 4) array of segment endpoints (i0, j0, i1, j1) in pixels."""
        if not self.edges:
            return np.zeros((0, 4))
        e = np.asarray(self.edges, dtype=np.int64)
        return np.hstack([self.parent.vertices[e[:, 0]], self.parent.vertices[e[:, 1]]])

    def to_graph(self) -> RoadGraph:
        """Standalone graph containing only the selected edges (reindexed)."""
        idx = sorted({v for e in self.edges for v in e})
        remap = {v: n for n, v in enumerate(idx)}
        verts = self.parent.vertices[idx] if idx else np.zeros((0, 2))
        edges = [(remap[a], remap[b]) for a, b in self.edges]
        base = self.parent.base[idx] if idx else np.zeros(0, dtype=bool)
        return RoadGraph(verts, np.asarray(edges, dtype=np.int64).reshape(-1, 2), base)

    def to_proposal(self, kind: str) -> Proposal:
        return Proposal(kind=kind, graph=self.to_graph())


def densify(g: RoadGraph, max_spacing_m: float, transform: GeoTransform) -> RoadGraph:
    """Subdivide edges so consecutive vertices are at most ``max_spacing_m`` apart.

    Original vertices are preserved (and keep their indices); each edge of
    length L is split into ceil(L / max_spacing) equal segments.  Inserted
    vertices are flagged base only when both edge endpoints are base.
    """
    if not (math.isfinite(max_spacing_m) and max_spacing_m > 0):
        raise ValueError(f"max_spacing must be positive, got {max_spacing_m!r}")
    max_px = transform.m_to_px(max_spacing_m)
    verts = [tuple(v) for v in g.vertices]
    base = list(g.base)
    edges: list[tuple[int, int]] = []
    for a, b in g.edges:
        a, b = int(a), int(b)
        pa, pb = g.vertices[a], g.vertices[b]
        length = float(np.hypot(pb[0] - pa[0], pb[1] - pa[1]))
        nseg = max(1, int(math.ceil(length / max_px - 1e-12)))
        prev = a
        for s in range(1, nseg):
            t = s / nseg
            verts.append((pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])))
            base.append(bool(g.base[a] and g.base[b]))
            cur = len(verts) - 1
            edges.append((prev, cur))
            prev = cur
        edges.append((prev, b))
    return RoadGraph(np.array(verts, dtype=np.float64).reshape(-1, 2),
                     np.array(edges, dtype=np.int64).reshape(-1, 2),
                     np.array(base, dtype=bool), extent=g.extent)


def edge_angles_at(g: RoadGraph, v: int) -> list[float]:
    """Angle of each incident edge, directed from ``v`` toward the neighbor."""
    if not 0 <= v < g.n_vertices:
        raise ValueError(f"vertex index out of range: {v}")
    pi_, pj = g.vertices[v]
    return [math.atan2(g.vertices[w][1] - pj, g.vertices[w][0] - pi_) % (2 * math.pi)
            for w in g.neighbors(v)]


def connected_components_of_difference(g_prime: RoadGraph, g_base: RoadGraph) -> list[SubgraphSelection]:
    """Group the edges of ``g_prime`` that are not in ``g_base`` into components.

    Connectivity is through shared vertices, including base junction
    vertices; base edges themselves do not merge components.  Requires
    ``g_base`` to be an index-aligned subgraph of ``g_prime``.
    """
    nb = g_base.n_vertices
    if nb > g_prime.n_vertices or not np.array_equal(g_base.vertices, g_prime.vertices[:nb]):
        raise ValueError("g_base vertices must be an index-aligned prefix of g_prime")
    if not g_base.edge_set <= g_prime.edge_set:
        raise ValueError("g_base edges must be a subset of g_prime edges")
    new_edges = [e for e in map(tuple, g_prime.edges.tolist()) if e not in g_base.edge_set]
    if not new_edges:
        return []
    parent: dict[int, int] = {}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in new_edges:
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[tuple[int, int]]] = {}
    for e in new_edges:
        groups.setdefault(find(e[0]), []).append(e)
    return [SubgraphSelection(g_prime, groups[root]) for root in sorted(groups)]


def bfs_subgraph(g: RoadGraph, v0: int, t_box_m: float, transform: GeoTransform) -> SubgraphSelection:
    """Breadth-first edge collection from ``v0`` bounded by box size.

    Whole edges are added in traversal order; the search stops right after
    the first edge whose addition makes max(bbox width, bbox height)
    exceed ``t_box_m`` (that edge is kept).
    """
    if not 0 <= v0 < g.n_vertices:
        raise ValueError(f"vertex index out of range: {v0}")
    if not t_box_m > 0:
        raise ValueError(f"t_box must be positive, got {t_box_m!r}")
    t_box_px = transform.m_to_px(t_box_m)
    selected: list[tuple[int, int]] = []
    seen_edges: set[tuple[int, int]] = set()
    visited = {v0}
    queue = [v0]
    p0 = g.vertices[v0]
    lo_i, lo_j, hi_i, hi_j = p0[0], p0[1], p0[0], p0[1]
    while queue:
        u = queue.pop(0)
        for w in g.neighbors(u):
            key = (min(u, w), max(u, w))
            if key in seen_edges:
                continue
            seen_edges.add(key)
            selected.append(key)
            for v in (u, w):
                pi_, pj = g.vertices[v]
                lo_i, hi_i = min(lo_i, pi_), max(hi_i, pi_)
                lo_j, hi_j = min(lo_j, pj), max(hi_j, pj)
            if max(hi_i - lo_i, hi_j - lo_j) > t_box_px:
                return SubgraphSelection(g, selected)
            if w not in visited:
                visited.add(w)
                queue.append(w)
    return SubgraphSelection(g, selected)


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance from point ``p`` to segment ``ab``."""
    return float(points_segment_distance(np.asarray(p, dtype=np.float64).reshape(1, 2), a, b)[0])


def points_segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    """Distances from an (n, 2) point array to segment ``ab``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        d = pts - a
        return np.hypot(d[:, 0], d[:, 1])
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = pts - proj
    return np.hypot(d[:, 0], d[:, 1])


def prune_near_map(candidates: RoadGraph, g_base: RoadGraph, radius_m: float,
                   transform: GeoTransform) -> RoadGraph:
    """Drop candidate edges whose midpoint lies within ``radius_m`` of a base edge."""
    if radius_m < 0:
        raise ValueError(f"radius must be non-negative, got {radius_m!r}")
    if not len(candidates.edges) or not len(g_base.edges):
        return candidates
    radius_px = transform.m_to_px(radius_m)
    mids = 0.5 * (candidates.vertices[candidates.edges[:, 0]]
                  + candidates.vertices[candidates.edges[:, 1]])
    grid = _SegmentGrid(g_base, cell=max(radius_px, 1.0))
    keep = [not grid.any_within(mid, radius_px) for mid in mids]
    kept_edges = candidates.edges[np.asarray(keep, dtype=bool)]
    return RoadGraph(candidates.vertices, kept_edges, candidates.base, extent=candidates.extent)


class _SegmentGrid:
    """Uniform-grid index over a graph's edges for radius queries."""

    def __init__(self, g: RoadGraph, cell: float):
        self._g = g
        self._cell = cell
        self._buckets: dict[tuple[int, int], list[int]] = {}
        for idx, (a, b) in enumerate(g.edges):
            pa, pb = g.vertices[int(a)], g.vertices[int(b)]
            ci0, ci1 = sorted((int(pa[0] // cell), int(pb[0] // cell)))
            cj0, cj1 = sorted((int(pa[1] // cell), int(pb[1] // cell)))
            for ci in range(ci0, ci1 + 1):
                for cj in range(cj0, cj1 + 1):
                    self._buckets.setdefault((ci, cj), []).append(idx)

    def any_within(self, p: np.ndarray, radius: float) -> bool:
        cell = self._cell
        ci, cj = int(p[0] // cell), int(p[1] // cell)
        reach = int(math.ceil(radius / cell))
        checked: set[int] = set()
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for idx in self._buckets.get((ci + di, cj + dj), ()):
                    if idx in checked:
                        continue
                    checked.add(idx)
                    a, b = self._g.edges[idx]
                    d = point_segment_distance(p, self._g.vertices[int(a)],
                                               self._g.vertices[int(b)])
                    if d <= radius:
                        return True
        return False
