"""Synthetic scene generator with oracle confidence rendering.

Scenes pair a jittered grid base map with planted change roads (one
epoch only), distractor paths (both epochs, the classic false-positive
source), textured imagery, and confidence tensors rendered directly
from geometry.  Everything is deterministic given the seed, so scenes
double as ground-truth oracles for the tracing and filtering stages.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .core import (
    CHANNEL_WIDTH,
    N_CHANNELS,
    ConfidenceTensor,
    GeoTransform,
    RasterImage,
    RoadGraph,
    angle_center,
    angular_distance,
    bboxes_intersect,
    pad_bbox,
)
from .evaluation import GroundTruthSet
from .graphops import SubgraphSelection, points_segment_distance

# Confidence corridor: radial Gaussian falloff and an angular cosine
# window two channels wide.  Radial sigma is kept narrow enough that
# densified base vertices one step away from a planted road do not see
# gate-opening confidence.
SIGMA_R_M = 5.0
ANGULAR_HALF_WIDTH = 2.0 * CHANNEL_WIDTH

ROAD_HALF_WIDTH_M = 4.2
ROAD_VALUE = 38.0
ACTIVITY_SHIFT = 45.0

# Planted roads leave the host edge at 75..105 degrees, snapped to a
# channel center; shallower departures put neighboring base vertices
# inside the confidence corridor and would trace duplicate ghosts.
DEPART_MIN = math.radians(75.0)
DEPART_MAX = math.radians(105.0)
PLANT_CLEARANCE_M = 15.0
PLANT_BBOX_PAD_M = 30.0
PLANT_LEN_RANGE_M = (80.0, 140.0)
# Must match the tracer's default densify spacing; takeoffs sit on that lattice.
TAKEOFF_SPACING_M = 10.0
BORDER_MARGIN_PX = 30.0

PLANT_EPOCHS = ("new", "old")


@dataclass(frozen=True)
class SceneParams:
    size_px: int = 1024
    meters_per_pixel: float = 0.6
    scale_factor: int = 4
    road_spacing_m: float = 170.0
    jitter_m: float = 8.0
    n_new: int = 3
    n_distractors: int = 5
    n_activity: int = 0
    noise_sigma: float = 0.0
    plant_epoch: str = "new"
    render_confidence: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size_px < 64 or self.size_px % self.scale_factor:
            raise ValueError(f"size_px must be a multiple of scale_factor, got {self.size_px}")
        if self.meters_per_pixel <= 0 or self.road_spacing_m <= 0:
            raise ValueError("meters_per_pixel and road_spacing_m must be positive")
        if min(self.n_new, self.n_distractors, self.n_activity) < 0:
            raise ValueError("counts must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma!r}")
        if self.plant_epoch not in PLANT_EPOCHS:
            raise ValueError(f"plant_epoch must be one of {PLANT_EPOCHS}")


@dataclass
class Scene:
    params: SceneParams
    transform: GeoTransform
    base_graph: RoadGraph
    full_graph: RoadGraph
    new_roads: list[SubgraphSelection]
    distractors: list[SubgraphSelection]
    activity: list[tuple[float, float, float]]
    m_old: RasterImage
    m_new: RasterImage
    p_old: ConfidenceTensor | None
    p_new: ConfidenceTensor | None

    @property
    def seed(self) -> int:
        return self.params.seed

    def planted_kind(self) -> str:
        return "new-road" if self.params.plant_epoch == "new" else "removed-road"


def scene_ground_truth(scene: Scene) -> GroundTruthSet:
    kind = scene.planted_kind()
    return GroundTruthSet(proposals=[s.to_proposal(kind) for s in scene.new_roads])


def value_noise_texture(rng: np.random.Generator, size: int,
                        lo: float = 130.0, hi: float = 205.0) -> np.ndarray:
    """Smooth value-noise background in [lo, hi] plus fine grain."""
    coarse = rng.uniform(lo, hi, (17, 17))
    pos = np.linspace(0.0, 16.0, size)
    k0 = np.minimum(pos.astype(np.int64), 15)
    frac = pos - k0
    rows = coarse[k0] * (1 - frac)[:, None] + coarse[k0 + 1] * frac[:, None]
    tex = rows[:, k0] * (1 - frac)[None, :] + rows[:, k0 + 1] * frac[None, :]
    tex = tex + rng.uniform(-8.0, 8.0, (size, size))
    return np.clip(tex, 110.0, 225.0)


def draw_road_ribbons(canvas: np.ndarray, segments: np.ndarray,
                      half_width_px: float, value: float = ROAD_VALUE) -> None:
    """Paint dark road ribbons onto a float grayscale canvas, in place."""
    h, w = canvas.shape
    for seg in np.asarray(segments, dtype=np.float64).reshape(-1, 4):
        a, b = seg[:2], seg[2:]
        lo_c = max(0, int(math.floor(min(a[0], b[0]) - half_width_px - 1)))
        hi_c = min(w, int(math.ceil(max(a[0], b[0]) + half_width_px + 1)) + 1)
        lo_r = max(0, int(math.floor(min(a[1], b[1]) - half_width_px - 1)))
        hi_r = min(h, int(math.ceil(max(a[1], b[1]) + half_width_px + 1)) + 1)
        if lo_c >= hi_c or lo_r >= hi_r:
            continue
        cc, rr = np.meshgrid(np.arange(lo_c, hi_c, dtype=np.float64),
                             np.arange(lo_r, hi_r, dtype=np.float64))
        d = points_segment_distance(
            np.column_stack([cc.ravel(), rr.ravel()]), a, b).reshape(rr.shape)
        sub = canvas[lo_r:hi_r, lo_c:hi_c]
        inside = d <= half_width_px
        sub[inside] = value + (sub[inside] - 167.0) * 0.15


def confidence_from_segments(segments: np.ndarray, size_px: int, scale_factor: int,
                             transform: GeoTransform,
                             sigma_r_m: float = SIGMA_R_M) -> np.ndarray:
    """Oracle confidence grid: max over edges of radial * angular window.

    Both the edge direction and its opposite are rendered, matching a
    directional road model's symmetric output.
    """
    gh = gw = size_px // scale_factor
    conf = np.zeros((gh, gw, N_CHANNELS), dtype=np.float32)
    sigma_px = transform.m_to_px(sigma_r_m)
    reach_cells = int(math.ceil(4.0 * sigma_px / scale_factor)) + 1
    centers = (np.arange(N_CHANNELS) + 0.5) * CHANNEL_WIDTH
    for seg in np.asarray(segments, dtype=np.float64).reshape(-1, 4):
        a, b = seg[:2], seg[2:]
        phi = math.atan2(b[1] - a[1], b[0] - a[0]) % (2.0 * math.pi)
        lo_c = max(0, int(min(a[0], b[0]) / scale_factor) - reach_cells)
        hi_c = min(gw, int(max(a[0], b[0]) / scale_factor) + reach_cells + 1)
        lo_r = max(0, int(min(a[1], b[1]) / scale_factor) - reach_cells)
        hi_r = min(gh, int(max(a[1], b[1]) / scale_factor) + reach_cells + 1)
        if lo_c >= hi_c or lo_r >= hi_r:
            continue
        cc, rr = np.meshgrid(np.arange(lo_c, hi_c, dtype=np.float64) * scale_factor,
                             np.arange(lo_r, hi_r, dtype=np.float64) * scale_factor)
        d = points_segment_distance(
            np.column_stack([cc.ravel(), rr.ravel()]), a, b).reshape(rr.shape)
        radial = np.exp(-(d * d) / (2.0 * sigma_px * sigma_px)).astype(np.float32)
        for direction in (phi, (phi + math.pi) % (2.0 * math.pi)):
            delta = np.abs(centers - direction) % (2.0 * math.pi)
            delta = np.minimum(delta, 2.0 * math.pi - delta)
            for k in np.nonzero(delta < ANGULAR_HALF_WIDTH)[0]:
                win = math.cos(0.5 * math.pi * delta[k] / ANGULAR_HALF_WIDTH)
                view = conf[lo_r:hi_r, lo_c:hi_c, k]
                np.maximum(view, radial * np.float32(win), out=view)
    return conf


def add_noise(arr: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return arr
    noisy = arr + rng.normal(0.0, sigma, arr.shape).astype(np.float32)
    return np.clip(noisy, 0.0, 1.0)


def _grid_base_graph(params: SceneParams, rng: np.random.Generator) -> RoadGraph:
    size = params.size_px
    spacing = params.road_spacing_m / params.meters_per_pixel
    jitter = params.jitter_m / params.meters_per_pixel
    margin = 2.0 * BORDER_MARGIN_PX
    coords = np.arange(margin, size - margin + 1e-9, spacing)
    if len(coords) < 2:
        raise ValueError("scene too small for the requested road spacing")
    n = len(coords)
    verts = []
    for r in range(n):
        for c in range(n):
            verts.append((coords[c] + rng.uniform(-jitter, jitter),
                          coords[r] + rng.uniform(-jitter, jitter)))
    edges = []
    for r in range(n):
        for c in range(n):
            if c + 1 < n:
                edges.append((r * n + c, r * n + c + 1))
            if r + 1 < n:
                edges.append((r * n + c, (r + 1) * n + c))
    return RoadGraph(np.array(verts), np.array(edges, dtype=np.int64),
                     extent=(size, size))


def _plant_segments(params: SceneParams, base: RoadGraph,
                    rng: np.random.Generator, count: int,
                    taken_bboxes: list, max_tries: int = 800) -> list[tuple]:
    """Pick (start, end, channel) corridors off base edge interiors."""
    if count == 0:
        return []
    size = params.size_px
    mpp = params.meters_per_pixel
    clear_px = PLANT_CLEARANCE_M / mpp
    pad_px = PLANT_BBOX_PAD_M / mpp
    planted: list[tuple] = []
    base_segs = np.hstack([base.vertices[base.edges[:, 0]],
                           base.vertices[base.edges[:, 1]]])
    for _ in range(max_tries):
        if len(planted) == count:
            break
        e = int(rng.integers(0, base.n_edges))
        pa = base.vertices[base.edges[e, 0]]
        pb = base.vertices[base.edges[e, 1]]
        # Take off exactly at a 10 m subdivision point (the tracer's
        # densify lattice) so a single seed vertex sits on the corridor;
        # its neighbours are a full step away and stay below the gate.
        length_m = math.hypot(pb[0] - pa[0], pb[1] - pa[1]) * mpp
        nseg = max(1, int(math.ceil(length_m / TAKEOFF_SPACING_M - 1e-12)))
        s_lo = int(math.ceil(0.35 * nseg))
        s_hi = int(math.floor(0.65 * nseg))
        if s_hi < s_lo:
            continue
        t = float(rng.integers(s_lo, s_hi + 1)) / nseg
        q = pa + t * (pb - pa)
        theta = math.atan2(pb[1] - pa[1], pb[0] - pa[0])
        channels = [k for k in range(N_CHANNELS)
                    if DEPART_MIN <= angular_distance(angle_center(k), theta) <= DEPART_MAX]
        k = int(channels[rng.integers(0, len(channels))])
        alpha = angle_center(k)
        length_px = float(rng.uniform(*PLANT_LEN_RANGE_M)) / mpp
        end = q + length_px * np.array([math.cos(alpha), math.sin(alpha)])
        if not (BORDER_MARGIN_PX <= end[0] <= size - BORDER_MARGIN_PX
                and BORDER_MARGIN_PX <= end[1] <= size - BORDER_MARGIN_PX):
            continue
        bbox = pad_bbox((min(q[0], end[0]), min(q[1], end[1]),
                         max(q[0], end[0]), max(q[1], end[1])), pad_px)
        if any(bboxes_intersect(bbox, other) for other in taken_bboxes):
            continue
        # Keep the corridor away from every base edge beyond the takeoff
        # region so no unrelated densified vertex opens the gate.
        s0 = 25.0 / mpp
        npts = max(2, int((length_px - s0) / (2.0 / mpp)))
        ss = np.linspace(s0, length_px, npts)
        pts = q[None, :] + ss[:, None] * np.array([math.cos(alpha), math.sin(alpha)])
        too_close = False
        for seg in base_segs:
            if points_segment_distance(pts, seg[:2], seg[2:]).min() < clear_px:
                too_close = True
                break
        if too_close:
            continue
        taken_bboxes.append(bbox)
        planted.append((q, end, k))
    if len(planted) < count:
        raise ValueError(f"could only place {len(planted)} of {count} roads; "
                         "lower the counts or raise the scene size")
    return planted


def _place_activity(params: SceneParams, all_segs: np.ndarray,
                    taken_bboxes: list, rng: np.random.Generator,
                    max_tries: int = 400) -> list[tuple[float, float, float]]:
    size = params.size_px
    clear_px = 40.0 / params.meters_per_pixel
    patches: list[tuple[float, float, float]] = []
    for _ in range(max_tries):
        if len(patches) == params.n_activity:
            break
        ci = float(rng.uniform(BORDER_MARGIN_PX, size - BORDER_MARGIN_PX))
        cj = float(rng.uniform(BORDER_MARGIN_PX, size - BORDER_MARGIN_PX))
        r = float(rng.uniform(8.0, 16.0))
        p = np.array([[ci, cj]])
        if any(points_segment_distance(p, s[:2], s[2:])[0] < clear_px + r
               for s in all_segs):
            continue
        box = (ci - r, cj - r, ci + r, cj + r)
        if any(bboxes_intersect(box, other) for other in taken_bboxes):
            continue
        taken_bboxes.append(pad_bbox(box, clear_px / 2))
        patches.append((ci, cj, r))
    if len(patches) < params.n_activity:
        raise ValueError("could not place activity patches clear of roads")
    return patches


def generate_scene(params: SceneParams | None = None, **overrides) -> Scene:
    """Deterministically build a full scene from parameters.

    Draw order (fixed for reproducibility): base graph jitter, planted
    change roads, distractors, activity patches, background texture,
    confidence noise old then new.
    """
    if params is None:
        params = SceneParams(**overrides)
    elif overrides:
        params = SceneParams(**{**asdict(params), **overrides})
    rng = np.random.default_rng(params.seed)
    size = params.size_px
    mpp = params.meters_per_pixel
    transform = GeoTransform(meters_per_pixel=mpp)

    base = _grid_base_graph(params, rng)
    taken: list = []
    new_roads = _plant_segments(params, base, rng, params.n_new, taken)
    distractors = _plant_segments(params, base, rng, params.n_distractors, taken)

    base_segs = np.hstack([base.vertices[base.edges[:, 0]],
                           base.vertices[base.edges[:, 1]]])
    new_segs = np.array([[q[0], q[1], e[0], e[1]] for q, e, _ in new_roads]).reshape(-1, 4)
    dis_segs = np.array([[q[0], q[1], e[0], e[1]] for q, e, _ in distractors]).reshape(-1, 4)
    both_epoch_segs = np.vstack([base_segs, dis_segs]) if len(dis_segs) else base_segs
    all_segs = np.vstack([both_epoch_segs, new_segs]) if len(new_segs) else both_epoch_segs

    activity = _place_activity(params, all_segs, taken, rng)

    # Imagery: one shared texture; epochs differ only at planted roads
    # and activity patches, so pixel differences localize real change.
    tex = value_noise_texture(rng, size)
    half_width_px = ROAD_HALF_WIDTH_M / mpp
    old_f = tex.copy()
    new_f = tex.copy()
    draw_road_ribbons(old_f, both_epoch_segs, half_width_px)
    draw_road_ribbons(new_f, both_epoch_segs, half_width_px)
    planted_canvas = new_f if params.plant_epoch == "new" else old_f
    if len(new_segs):
        draw_road_ribbons(planted_canvas, new_segs, half_width_px)
    if activity:
        cc, rr = np.meshgrid(np.arange(size, dtype=np.float64),
                             np.arange(size, dtype=np.float64))
        for ci, cj, r in activity:
            blob = (cc - ci) ** 2 + (rr - cj) ** 2 <= r * r
            new_f[blob] = np.clip(new_f[blob] + ACTIVITY_SHIFT, 0.0, 255.0)

    def to_rgb(gray: np.ndarray) -> RasterImage:
        rgb = np.stack([gray * 0.96, gray, gray * 0.88], axis=2)
        return RasterImage(np.clip(rgb, 0, 255).astype(np.uint8), transform)

    m_old, m_new = to_rgb(old_f), to_rgb(new_f)

    p_old = p_new = None
    if params.render_confidence:
        shared = confidence_from_segments(both_epoch_segs, size, params.scale_factor,
                                          transform)
        if len(new_segs):
            planted_conf = confidence_from_segments(new_segs, size, params.scale_factor,
                                                    transform)
            planted_epoch = np.maximum(shared, planted_conf)
        else:
            planted_epoch = shared
        old_arr = planted_epoch if params.plant_epoch == "old" else shared
        new_arr = planted_epoch if params.plant_epoch == "new" else shared
        old_arr = add_noise(old_arr, params.noise_sigma, rng)
        new_arr = add_noise(new_arr, params.noise_sigma, rng)
        p_old = ConfidenceTensor(old_arr, params.scale_factor)
        p_new = ConfidenceTensor(new_arr, params.scale_factor)

    nb = base.n_vertices
    verts = list(map(tuple, base.vertices))
    edges = [tuple(e) for e in base.edges.tolist()]
    flags = [True] * nb
    selections: list[tuple[int, int]] = []
    for q, end, _ in new_roads + distractors:
        verts.extend([tuple(q), tuple(end)])
        flags.extend([False, False])
        edges.append((len(verts) - 2, len(verts) - 1))
        selections.append(edges[-1])
    full = RoadGraph(np.array(verts), np.array(edges, dtype=np.int64),
                     np.array(flags, dtype=bool), extent=(size, size))
    new_sel = [SubgraphSelection(full, [selections[n]]) for n in range(len(new_roads))]
    dis_sel = [SubgraphSelection(full, [selections[len(new_roads) + n]])
               for n in range(len(distractors))]

    return Scene(params=params, transform=transform, base_graph=base,
                 full_graph=full, new_roads=new_sel, distractors=dis_sel,
                 activity=activity, m_old=m_old, m_new=m_new,
                 p_old=p_old, p_new=p_new)


def write_scene(scene: Scene, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(scene.m_old.data, "RGB").save(out / "m_old.png")
    Image.fromarray(scene.m_new.data, "RGB").save(out / "m_new.png")
    for name, img in (("m_old.ctns", scene.m_old), ("m_new.ctns", scene.m_new)):
        formats.write_ctns(out / name, img.data.astype(np.float32) / 255.0)
    if scene.p_old is not None:
        formats.write_ctns(out / "p_old.ctns", scene.p_old.data, scene.p_old.scale_factor)
        formats.write_ctns(out / "p_new.ctns", scene.p_new.data, scene.p_new.scale_factor)
    formats.dump_json(out / "base_graph.geojson",
                      formats.graph_to_geojson(scene.base_graph, scene.transform))
    kind = scene.planted_kind()
    formats.dump_json(out / "ground_truth.geojson", formats.proposals_to_geojson(
        [s.to_proposal(kind) for s in scene.new_roads], scene.transform))
    formats.dump_json(out / "distractors.geojson", formats.proposals_to_geojson(
        [s.to_proposal("new-road") for s in scene.distractors], scene.transform))
    manifest = {
        "format": "mapdiff-scene",
        "version": 1,
        "params": asdict(scene.params),
        "activity": [list(a) for a in scene.activity],
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    formats.dump_json(out / "manifest.json", manifest)


def load_scene(scene_dir: str | Path) -> Scene:
    src = Path(scene_dir)
    manifest = formats.load_json(src / "manifest.json")
    params = SceneParams(**manifest["params"])
    transform = GeoTransform(meters_per_pixel=params.meters_per_pixel)
    m_old = RasterImage(np.asarray(Image.open(src / "m_old.png")), transform)
    m_new = RasterImage(np.asarray(Image.open(src / "m_new.png")), transform)
    p_old = p_new = None
    if (src / "p_old.ctns").exists():
        data, scale = formats.read_ctns(src / "p_old.ctns")
        p_old = ConfidenceTensor(data, scale)
        data, scale = formats.read_ctns(src / "p_new.ctns")
        p_new = ConfidenceTensor(data, scale)
    base, _ = formats.graph_from_geojson(formats.load_json(src / "base_graph.geojson"))
    gt_props = formats.proposals_from_geojson(formats.load_json(src / "ground_truth.geojson"))
    dis_props = formats.proposals_from_geojson(formats.load_json(src / "distractors.geojson"))

    verts = list(map(tuple, base.vertices))
    flags = [True] * base.n_vertices
    edges = [tuple(e) for e in base.edges.tolist()]
    groups: list[list[tuple[int, int]]] = []
    for prop in gt_props + dis_props:
        offset = len(verts)
        verts.extend(map(tuple, prop.graph.vertices))
        flags.extend([False] * prop.graph.n_vertices)
        group = [(int(a) + offset, int(b) + offset) for a, b in prop.graph.edges]
        edges.extend(group)
        groups.append(group)
    size = params.size_px
    full = RoadGraph(np.array(verts), np.array(edges, dtype=np.int64),
                     np.array(flags, dtype=bool), extent=(size, size))
    sels = [SubgraphSelection(full, g) for g in groups]
    return Scene(params=params, transform=transform, base_graph=base,
                 full_graph=full, new_roads=sels[:len(gt_props)],
                 distractors=sels[len(gt_props):],
                 activity=[tuple(a) for a in manifest["activity"]],
                 m_old=m_old, m_new=m_new, p_old=p_old, p_new=p_new)
