"""Change-seeking iterative tracing.

Starting from a densified base map, a depth-first search extends the
graph one fixed-length step at a time.  A step from vertex v in channel
direction k is taken only when the new-epoch confidence at v's pixel in
channel k is at least ``t_new`` while the old-epoch confidence is below
``t_old``; connected components of the added edges become change
proposals.  Running in reverse mode (tensors swapped) detects removed
roads instead of new ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CHANNEL_WIDTH,
    N_CHANNELS,
    Bbox,
    ConfidenceTensor,
    GeoTransform,
    Proposal,
    RoadGraph,
    angular_distance,
)
from .graphops import connected_components_of_difference, densify

TRACE_MODES = ("forward", "reverse")

# Step targets within this fraction of a step of an existing vertex are
# snapped onto it instead of spawning a near-duplicate vertex.
SNAP_RADIUS_FRACTION = 0.5


@dataclass(frozen=True)
class TracingConfig:
    """Gating thresholds and step geometry for the tracer."""

    t_new: float = 0.4
    t_old: float = 0.4
    step_length_m: float = 10.0
    min_angular_sep: float = math.pi / 6
    max_steps: int = 100_000
    mode: str = "forward"
    # Disabling the old-epoch gate turns the tracer into a plain
    # (single-image) tracer; used to demonstrate distractor false
    # positives, not for production runs.
    change_seeking: bool = True
    densify_spacing_m: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.t_new <= 1.0:
            raise ValueError(f"t_new must be in (0, 1], got {self.t_new!r}")
        if not 0.0 <= self.t_old < 1.0:
            raise ValueError(f"t_old must be in [0, 1), got {self.t_old!r}")
        if not (math.isfinite(self.step_length_m) and self.step_length_m > 0):
            raise ValueError(f"step_length_m must be positive, got {self.step_length_m!r}")
        if not 0.0 < self.min_angular_sep < math.pi:
            raise ValueError(f"min_angular_sep must be in (0, pi), got {self.min_angular_sep!r}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps!r}")
        if self.mode not in TRACE_MODES:
            raise ValueError(f"mode must be one of {TRACE_MODES}, got {self.mode!r}")
        if not self.densify_spacing_m > 0:
            raise ValueError(f"densify_spacing_m must be positive, got {self.densify_spacing_m!r}")


@dataclass(frozen=True)
class Decision:
    """One stack-top evaluation, as recorded in the trace log.

    ``action`` is "extend" or "pop".  File serialization keeps the six
    fields (i, j, k, p_new, p_old, action); the remaining fields exist
    so tests can replay the trace without re-parsing geometry.
    """

    i: float
    j: float
    k: int
    p_new: float
    p_old: float
    action: str
    vertex: int = -1
    target: tuple[float, float] | None = None
    snapped_to: int | None = None

    def format_line(self) -> str:
        return f"{self.i:.3f} {self.j:.3f} {self.k} {self.p_new:.6f} {self.p_old:.6f} {self.action}"


@dataclass
class TraceResult:
    g_prime: RoadGraph
    proposals: list[Proposal]
    truncated: bool = False
    decisions: list[Decision] = field(default_factory=list)


def write_decision_log(path, decisions: list[Decision]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in decisions:
            f.write(d.format_line() + "\n")


def _bilinear_weights(p: ConfidenceTensor, i: float, j: float):
    h, w = p.data.shape[:2]
    u = min(max(i / p.scale_factor, 0.0), w - 1.0)
    v = min(max(j / p.scale_factor, 0.0), h - 1.0)
    u0, v0 = int(u), int(v)
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    fu, fv = u - u0, v - v0
    return (v0, v1, u0, u1,
            (1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)


def _check_in_extent(p: ConfidenceTensor, i: float, j: float) -> None:
    ew, eh = p.image_extent()
    if not (0.0 <= i <= ew and 0.0 <= j <= eh):
        raise ValueError(f"query ({i}, {j}) outside image extent {ew}x{eh}")


def sample_confidence(p: ConfidenceTensor, i: float, j: float, k: int) -> float:
    """Bilinear confidence of channel ``k`` at image position (i, j)."""
    if not 0 <= k < N_CHANNELS:
        raise ValueError(f"channel index out of range: {k}")
    _check_in_extent(p, i, j)
    v0, v1, u0, u1, w00, w10, w01, w11 = _bilinear_weights(p, i, j)
    d = p.data
    return float(w00 * d[v0, u0, k] + w10 * d[v0, u1, k]
                 + w01 * d[v1, u0, k] + w11 * d[v1, u1, k])


def sample_all_channels(p: ConfidenceTensor, i: float, j: float) -> np.ndarray:
    """Bilinear confidence of every channel at image position (i, j)."""
    _check_in_extent(p, i, j)
    v0, v1, u0, u1, w00, w10, w01, w11 = _bilinear_weights(p, i, j)
    d = p.data
    return (w00 * d[v0, u0] + w10 * d[v0, u1] + w01 * d[v1, u0] + w11 * d[v1, u1])


_CENTERS = (np.arange(N_CHANNELS) + 0.5) * CHANNEL_WIDTH


def _valid_channel_mask(incident_angles: list[float], min_sep: float) -> np.ndarray:
    """Channels whose center clears every incident edge angle by min_sep."""
    mask = np.ones(N_CHANNELS, dtype=bool)
    for ang in incident_angles:
        d = np.abs(_CENTERS - ang) % (2.0 * math.pi)
        d = np.minimum(d, 2.0 * math.pi - d)
        mask &= d >= min_sep
    return mask


def trace_changes(
    g: RoadGraph,
    p_new: ConfidenceTensor,
    p_old: ConfidenceTensor,
    cfg: TracingConfig | None = None,
    transform: GeoTransform | None = None,
    keep_log: bool = False,
    seed_region: Bbox | None = None,
) -> TraceResult:
    """Trace change candidates from base map ``g`` over a tensor pair.

    Returns the augmented graph, one proposal per connected component of
    added edges, a truncation flag (max_steps reached), and the decision
    log when ``keep_log`` is set.  ``seed_region`` restricts which base
    vertices seed the walk (half-open pixel bbox); traversal itself may
    leave the region.
    """
    cfg = cfg or TracingConfig()
    transform = transform or GeoTransform()
    if p_new.data.shape != p_old.data.shape or p_new.scale_factor != p_old.scale_factor:
        raise ValueError(
            f"confidence tensors disagree: {p_new.data.shape}@{p_new.scale_factor} "
            f"vs {p_old.data.shape}@{p_old.scale_factor}")
    if cfg.mode == "reverse":
        p_new, p_old = p_old, p_new
        kind = "removed-road"
    else:
        kind = "new-road"
    extent = p_new.image_extent()
    ew, eh = extent
    if g.n_vertices:
        vi, vj = g.vertices[:, 0], g.vertices[:, 1]
        if vi.min() < 0 or vj.min() < 0 or vi.max() > ew or vj.max() > eh:
            raise ValueError("base graph vertices fall outside tensor extent")

    g_dense = densify(g, cfg.densify_spacing_m, transform)
    builder = g_dense.builder()
    step_px = transform.m_to_px(cfg.step_length_m)
    snap_px = SNAP_RADIUS_FRACTION * step_px
    builder.rebuild_grid(cell=max(snap_px, 1.0))

    # Incremental adjacency as incident edge angles per vertex; kept in
    # lockstep with builder edges so the 30 degree rule sees every edge.
    incident: list[list[float]] = [[] for _ in range(builder.n_vertices)]
    traced_incident: list[list[float]] = [[] for _ in range(builder.n_vertices)]
    for a, b in g_dense.edges:
        a, b = int(a), int(b)
        pa, pb = g_dense.vertices[a], g_dense.vertices[b]
        ang = math.atan2(pb[1] - pa[1], pb[0] - pa[0]) % (2.0 * math.pi)
        incident[a].append(ang)
        incident[b].append((ang + math.pi) % (2.0 * math.pi))

    def add_edge(a: int, b: int) -> None:
        builder.add_edge(a, b)
        pa, pb = builder.vertex(a), builder.vertex(b)
        ang = math.atan2(pb[1] - pa[1], pb[0] - pa[0]) % (2.0 * math.pi)
        while len(incident) < builder.n_vertices:
            incident.append([])
            traced_incident.append([])
        incident[a].append(ang)
        incident[b].append((ang + math.pi) % (2.0 * math.pi))
        traced_incident[a].append(ang)
        traced_incident[b].append((ang + math.pi) % (2.0 * math.pi))

    decisions: list[Decision] = []
    if seed_region is None:
        stack = list(range(builder.n_vertices))
    else:
        ri0, rj0, ri1, rj1 = seed_region
        stack = [v for v in range(builder.n_vertices)
                 if ri0 <= builder.vertex(v)[0] < ri1
                 and rj0 <= builder.vertex(v)[1] < rj1]
    decision_count = [0] * builder.n_vertices
    steps = 0
    truncated = False

    def record(d: Decision) -> None:
        if keep_log:
            decisions.append(d)

    while stack:
        if steps >= cfg.max_steps:
            truncated = True
            break
        v = stack[-1]
        while len(decision_count) < builder.n_vertices:
            decision_count.append(0)
        if decision_count[v] >= N_CHANNELS:
            stack.pop()
            continue
        decision_count[v] += 1
        vi_, vj_ = builder.vertex(v)

        valid = _valid_channel_mask(incident[v], cfg.min_angular_sep)
        if not valid.any():
            record(Decision(vi_, vj_, -1, 0.0, 0.0, "pop", vertex=v))
            stack.pop()
            continue
        conf_new = sample_all_channels(p_new, vi_, vj_)
        masked = np.where(valid, conf_new, -1.0)
        k = int(np.argmax(masked))
        pn = float(conf_new[k])
        po = sample_confidence(p_old, vi_, vj_, k)
        gate = pn >= cfg.t_new and (not cfg.change_seeking or po < cfg.t_old)
        if not gate:
            record(Decision(vi_, vj_, k, pn, po, "pop", vertex=v))
            stack.pop()
            continue

        alpha = (k + 0.5) * CHANNEL_WIDTH
        ti = vi_ + step_px * math.cos(alpha)
        tj = vj_ + step_px * math.sin(alpha)
        if not (0.0 <= ti <= ew and 0.0 <= tj <= eh):
            record(Decision(vi_, vj_, k, pn, po, "pop", vertex=v))
            stack.pop()
            continue

        target = builder.nearest_vertex_within(ti, tj, snap_px)
        if target is not None:
            if target == v or builder.has_edge(v, target):
                record(Decision(vi_, vj_, k, pn, po, "pop", vertex=v))
                stack.pop()
                continue
            wi, wj = builder.vertex(target)
            ang = math.atan2(wj - vj_, wi - vi_) % (2.0 * math.pi)
            back = (ang + math.pi) % (2.0 * math.pi)
            # A snapped edge deviates from the channel center, so re-check
            # the separation rule on the true angle at both endpoints
            # (against traced edges; base edges were covered by the
            # channel-validity test at v).
            ok = all(angular_distance(ang, e) >= cfg.min_angular_sep
                     for e in traced_incident[v])
            ok = ok and all(angular_distance(back, e) >= cfg.min_angular_sep
                            for e in traced_incident[target])
            if not ok:
                record(Decision(vi_, vj_, k, pn, po, "pop", vertex=v))
                stack.pop()
                continue
            add_edge(v, target)
            steps += 1
            record(Decision(vi_, vj_, k, pn, po, "extend", vertex=v,
                            target=(wi, wj), snapped_to=target))
            continue

        w = builder.add_vertex(ti, tj, base=False)
        incident.append([])
        traced_incident.append([])
        decision_count.append(0)
        add_edge(v, w)
        steps += 1
        record(Decision(vi_, vj_, k, pn, po, "extend", vertex=v, target=(ti, tj)))
        stack.append(w)

    g_prime = builder.finalize(extent=extent)
    components = connected_components_of_difference(g_prime, g_dense)
    proposals = [c.to_proposal(kind) for c in components]
    return TraceResult(g_prime=g_prime, proposals=proposals,
                       truncated=truncated, decisions=decisions)
