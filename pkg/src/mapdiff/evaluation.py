"""Proposal matching metrics and graph similarity scoring.

Precision/recall matching treats a proposal as correct when its bounding
box intersects any ground-truth bounding box (closed intervals, so
touching counts).  Proposals that only hit allowlist entries are
discarded from the precision denominator rather than counted as errors.
Geometric accuracy uses an APLS-style path length comparison.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .core import GeoTransform, Proposal, RoadGraph, bboxes_intersect
from .filtering import FilterConfig, filter_proposals


@dataclass
class GroundTruthSet:
    proposals: list[Proposal]
    allowlist: list[Proposal] = field(default_factory=list)

    def __post_init__(self) -> None:
        kinds = {p.kind for p in self.proposals}
        if len(kinds) > 1:
            raise ValueError(f"ground truth mixes proposal kinds: {sorted(kinds)}")


@dataclass(frozen=True)
class PRPoint:
    """One precision/recall measurement.

    Precision counts proposals that hit at least one ground-truth box;
    recall counts ground-truth boxes hit by at least one proposal.  The
    two match counts differ in general, so both are kept.
    """

    precision: float
    recall: float
    matched_proposals: int
    matched_truth: int
    n_proposals: int
    n_truth: int
    threshold: float | None = None

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.threshold is None:
            d.pop("threshold")
        return d

    def format_line(self) -> str:
        t = "-" if self.threshold is None else f"{self.threshold:.6f}"
        return (f"{t} {self.precision:.6f} {self.recall:.6f} "
                f"{self.matched_proposals} {self.matched_truth} "
                f"{self.n_proposals} {self.n_truth}")


def match_proposals(props: list[Proposal], p_star: GroundTruthSet) -> PRPoint:
    truth_boxes = [t.bbox for t in p_star.proposals]
    allow_boxes = [a.bbox for a in p_star.allowlist]
    matched_proposals = 0
    discarded = 0
    truth_hit = [False] * len(truth_boxes)
    for prop in props:
        hits = [n for n, tb in enumerate(truth_boxes) if bboxes_intersect(prop.bbox, tb)]
        if hits:
            matched_proposals += 1
            for n in hits:
                truth_hit[n] = True
        elif any(bboxes_intersect(prop.bbox, ab) for ab in allow_boxes):
            discarded += 1
    n_proposals = len(props) - discarded
    matched_truth = sum(truth_hit)
    precision = matched_proposals / n_proposals if n_proposals else 1.0
    recall = matched_truth / len(truth_boxes) if truth_boxes else 0.0
    return PRPoint(precision=precision, recall=recall,
                   matched_proposals=matched_proposals, matched_truth=matched_truth,
                   n_proposals=n_proposals, n_truth=len(truth_boxes))


def pr_curve(props: list[Proposal], p_star: GroundTruthSet,
             thresholds: list[float], cfg: FilterConfig | None = None) -> list[PRPoint]:
    """PR point per threshold, keeping proposals with score < threshold."""
    if any(p.score is None for p in props):
        raise ValueError("pr_curve requires scored proposals")
    base = cfg or FilterConfig()
    points = []
    for t in thresholds:
        cfg_t = dataclasses.replace(base, t_filter=float(t))
        kept, _ = filter_proposals(list(props), cfg=cfg_t)
        points.append(dataclasses.replace(match_proposals(kept, p_star), threshold=float(t)))
    return points


def _shortest_paths(g: RoadGraph, sources: np.ndarray) -> np.ndarray:
    n = g.n_vertices
    if not g.n_edges:
        return np.full((len(sources), n), np.inf)
    lengths = g.edge_lengths_px()
    a, b = g.edges[:, 0], g.edges[:, 1]
    w = csr_matrix((np.concatenate([lengths, lengths]),
                    (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n))
    return dijkstra(w, directed=False, indices=sources)


def _snap_indices(src: RoadGraph, dst: RoadGraph, snap_px: float) -> np.ndarray:
    """Nearest dst vertex per src vertex, or -1 beyond the snap radius."""
    sv, dv = src.vertices, dst.vertices
    out = np.full(len(sv), -1, dtype=np.int64)
    if not len(dv):
        return out
    for n, p in enumerate(sv):
        d2 = (dv[:, 0] - p[0]) ** 2 + (dv[:, 1] - p[1]) ** 2
        best = int(np.argmin(d2))
        if d2[best] <= snap_px * snap_px:
            out[n] = best
    return out


def _one_way(src: RoadGraph, dst: RoadGraph, n_samples: int, rng,
             snap_px: float) -> float:
    """Mean per-pair path similarity, sampling endpoint pairs in src.

    Pairs whose src endpoints are disconnected, or which cannot be
    snapped onto dst and connected there, score 0.
    """
    n = src.n_vertices
    if n < 2:
        return 0.0
    pairs = np.empty((n_samples, 2), dtype=np.int64)
    for row in range(n_samples):
        u = int(rng.integers(0, n))
        w = int(rng.integers(0, n))
        while w == u:
            w = int(rng.integers(0, n))
        pairs[row] = (u, w)
    sources = np.unique(pairs[:, 0])
    src_dist = _shortest_paths(src, sources)
    src_row = {int(s): r for r, s in enumerate(sources)}
    snap = _snap_indices(src, dst, snap_px)
    dst_sources = np.unique([snap[u] for u in pairs[:, 0] if snap[u] >= 0])
    if len(dst_sources):
        dst_dist = _shortest_paths(dst, dst_sources)
        dst_row = {int(s): r for r, s in enumerate(dst_sources)}
    total = 0.0
    for u, w in pairs:
        length = src_dist[src_row[int(u)], int(w)]
        if not np.isfinite(length) or length <= 0:
            continue
        du, dw = snap[int(u)], snap[int(w)]
        if du < 0 or dw < 0:
            continue
        other = dst_dist[dst_row[int(du)], int(dw)]
        if not np.isfinite(other):
            continue
        total += 1.0 - min(1.0, abs(length - other) / length)
    return total / n_samples


def apls(g_truth: RoadGraph, g_prop: RoadGraph, n_samples: int = 500,
         rng_seed: int = 0, snap_radius_m: float = 25.0,
         transform: GeoTransform | None = None) -> float:
    """Symmetrized average path length similarity in [0, 1].

    Every sampled pair contributes to the mean; unreachable or
    unsnappable pairs contribute 0, so deleting proposal edges can only
    lower the score.
    """
    if g_truth.n_vertices == 0 or g_truth.n_edges == 0:
        raise ValueError("APLS requires a non-empty truth graph")
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples!r}")
    if g_prop.n_edges == 0:
        return 0.0
    transform = transform or GeoTransform()
    snap_px = transform.m_to_px(snap_radius_m)
    rng = np.random.default_rng(rng_seed)
    forward = _one_way(g_truth, g_prop, n_samples, rng, snap_px)
    backward = _one_way(g_prop, g_truth, n_samples, rng, snap_px)
    return (forward + backward) / 2.0
