"""End-to-end map update runs: load inputs, trace per tile, merge, filter.

Configuration is a flat INI file; every run directory gets a report and
a manifest embedding the config hash so outputs can be tied back to the
exact settings that produced them.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .core import (
    Bbox,
    ConfidenceTensor,
    GeoTransform,
    RasterImage,
    RoadGraph,
)
from .evaluation import GroundTruthSet, apls, match_proposals, pr_curve
from .filtering import FilterConfig, filter_proposals, make_scorer, sample_training_pair, export_dataset
from .graphops import connected_components_of_difference, densify
from .tracing import TracingConfig, trace_changes, write_decision_log

MIN_TILE_PX = 512


@dataclass
class PipelineConfig:
    """Paths plus stage settings for one pipeline run."""

    m_old: str = ""
    m_new: str = ""
    p_old: str = ""
    p_new: str = ""
    base_graph: str = ""
    out_dir: str = "run"
    tracing: TracingConfig = field(default_factory=TracingConfig)
    filtering: FilterConfig = field(default_factory=FilterConfig)
    scorer: str = "mock"
    tile_px: int = 4096
    seed: int = 0
    meters_per_pixel: float = 0.6
    debug_log: str = ""

    def __post_init__(self) -> None:
        if self.tile_px < MIN_TILE_PX:
            raise ValueError(f"tile_px must be >= {MIN_TILE_PX}, got {self.tile_px!r}")
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")


_PATH_KEYS = ("m_old", "m_new", "p_old", "p_new", "base_graph", "out_dir")
_TRACING_KEYS = ("t_new", "t_old", "step_length_m", "min_angular_sep_deg",
                 "max_steps", "mode", "change_seeking", "densify_spacing_m")
_FILTER_KEYS = ("t_filter", "mask_buffer_m", "pad_m", "w_mask_size",
                "t_box_min_m", "t_box_max_m", "mismatch_max_dist_m",
                "p_matching", "p_random_window", "scorer")
_PIPELINE_KEYS = ("tile_px", "seed", "meters_per_pixel", "debug_log")


def _as_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def config_from_ini(path: str | Path) -> PipelineConfig:
    """Parse a sectioned key=value config file."""
    parser = configparser.ConfigParser()
    if not parser.read(str(path)):
        raise FileNotFoundError(f"config not found: {path}")

    known = {"paths": _PATH_KEYS, "tracing": _TRACING_KEYS,
             "filter": _FILTER_KEYS, "pipeline": _PIPELINE_KEYS}
    for section in parser.sections():
        if section not in known:
            raise ValueError(f"unknown config section: [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ValueError(f"unknown config key: {section}.{key}")

    cfg = PipelineConfig()
    if parser.has_section("paths"):
        for key in _PATH_KEYS:
            if parser.has_option("paths", key):
                setattr(cfg, key, parser.get("paths", key))

    t_kwargs = {}
    if parser.has_section("tracing"):
        sec = parser["tracing"]
        for key, cast in (("t_new", float), ("t_old", float),
                          ("step_length_m", float), ("max_steps", int),
                          ("densify_spacing_m", float), ("mode", str)):
            if key in sec:
                t_kwargs[key] = cast(sec[key])
        if "min_angular_sep_deg" in sec:
            t_kwargs["min_angular_sep"] = math.radians(float(sec["min_angular_sep_deg"]))
        if "change_seeking" in sec:
            t_kwargs["change_seeking"] = _as_bool(sec["change_seeking"])
    cfg.tracing = TracingConfig(**t_kwargs)

    f_kwargs = {}
    if parser.has_section("filter"):
        sec = parser["filter"]
        for key, cast in (("t_filter", float), ("mask_buffer_m", float),
                          ("pad_m", float), ("w_mask_size", int),
                          ("mismatch_max_dist_m", float), ("p_matching", float),
                          ("p_random_window", float)):
            if key in sec:
                f_kwargs[key] = cast(sec[key])
        lo = float(sec["t_box_min_m"]) if "t_box_min_m" in sec else None
        hi = float(sec["t_box_max_m"]) if "t_box_max_m" in sec else None
        if lo is not None or hi is not None:
            default = FilterConfig()
            f_kwargs["t_box_range"] = (lo if lo is not None else default.t_box_range[0],
                                       hi if hi is not None else default.t_box_range[1])
        if "scorer" in sec:
            cfg.scorer = sec["scorer"]
    cfg.filtering = FilterConfig(**f_kwargs)

    if parser.has_section("pipeline"):
        sec = parser["pipeline"]
        if "tile_px" in sec:
            cfg.tile_px = int(sec["tile_px"])
        if "seed" in sec:
            cfg.seed = int(sec["seed"])
        if "meters_per_pixel" in sec:
            cfg.meters_per_pixel = float(sec["meters_per_pixel"])
        if "debug_log" in sec:
            cfg.debug_log = sec["debug_log"]
    cfg.__post_init__()
    return cfg


def canonical_items(cfg: PipelineConfig) -> list[str]:
    """Sorted section.key=value lines covering every effective setting."""
    t, f = cfg.tracing, cfg.filtering
    items = {
        "paths.m_old": cfg.m_old,
        "paths.m_new": cfg.m_new,
        "paths.p_old": cfg.p_old,
        "paths.p_new": cfg.p_new,
        "paths.base_graph": cfg.base_graph,
        "paths.out_dir": cfg.out_dir,
        "tracing.t_new": repr(t.t_new),
        "tracing.t_old": repr(t.t_old),
        "tracing.step_length_m": repr(t.step_length_m),
        "tracing.min_angular_sep": repr(t.min_angular_sep),
        "tracing.max_steps": repr(t.max_steps),
        "tracing.mode": t.mode,
        "tracing.change_seeking": repr(t.change_seeking),
        "tracing.densify_spacing_m": repr(t.densify_spacing_m),
        "filter.t_filter": repr(f.t_filter),
        "filter.mask_buffer_m": repr(f.mask_buffer_m),
        "filter.pad_m": repr(f.pad_m),
        "filter.w_mask_size": repr(f.w_mask_size),
        "filter.t_box_min_m": repr(f.t_box_range[0]),
        "filter.t_box_max_m": repr(f.t_box_range[1]),
        "filter.mismatch_max_dist_m": repr(f.mismatch_max_dist_m),
        "filter.p_matching": repr(f.p_matching),
        "filter.p_random_window": repr(f.p_random_window),
        "filter.scorer": cfg.scorer,
        "pipeline.tile_px": repr(cfg.tile_px),
        "pipeline.seed": repr(cfg.seed),
        "pipeline.meters_per_pixel": repr(cfg.meters_per_pixel),
    }
    return [f"{k}={v}" for k, v in sorted(items.items())]


def config_hash(cfg: PipelineConfig) -> str:
    text = "\n".join(canonical_items(cfg)) + "\n"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _require(path: str, what: str) -> Path:
    if not path:
        raise ValueError(f"{what} path not configured")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def load_imagery(path: str | Path, transform: GeoTransform) -> RasterImage:
    """Read epoch imagery from PNG or a [0,1] float tensor file."""
    p = Path(path)
    if p.suffix.lower() == ".ctns":
        data, _scale = formats.read_ctns(p)
        return RasterImage(np.round(np.asarray(data, dtype=np.float32) * 255.0)
                           .astype(np.uint8), transform)
    with Image.open(p) as img:
        return RasterImage(np.asarray(img.convert("RGB")), transform)


def load_tensor(path: str | Path) -> ConfidenceTensor:
    data, scale = formats.read_ctns(path)
    return ConfidenceTensor(data, scale)


def load_graph(path: str | Path, fallback: GeoTransform) -> tuple[RoadGraph, GeoTransform]:
    g, transform = formats.graph_from_geojson(formats.load_json(path))
    return g, transform or fallback


def _tiles(extent: tuple[int, int], tile_px: int) -> list[Bbox]:
    # Final row/column stretches past the extent so boundary vertices
    # always land in exactly one half-open tile.
    ew, eh = extent
    out = []
    for j0 in range(0, eh, tile_px):
        j1 = j0 + tile_px if j0 + tile_px < eh else eh + 1
        for i0 in range(0, ew, tile_px):
            i1 = i0 + tile_px if i0 + tile_px < ew else ew + 1
            out.append((float(i0), float(j0), float(i1), float(j1)))
    return out


def trace_tiled(g: RoadGraph, p_new: ConfidenceTensor, p_old: ConfidenceTensor,
                tracing: TracingConfig, transform: GeoTransform, tile_px: int,
                keep_log: bool = False):
    """Trace each tile's seed vertices and merge the added edges.

    Vertices from different tiles are unified when within one pixel, so
    a single-tile run and a split run produce the same merged graph.
    Returns (proposals, merged_graph, truncated, decisions).
    """
    g_dense = densify(g, tracing.densify_spacing_m, transform)
    merged = g_dense.builder()
    merged.rebuild_grid(cell=1.0)
    n_dense = g_dense.n_vertices
    dense_edges = g_dense.edge_set

    truncated = False
    decisions = []
    for region in _tiles(p_new.image_extent(), tile_px):
        res = trace_changes(g, p_new, p_old, tracing, transform,
                            keep_log=keep_log, seed_region=region)
        truncated = truncated or res.truncated
        decisions.extend(res.decisions)
        gp = res.g_prime
        mapping = list(range(n_dense))
        for v in range(n_dense, gp.n_vertices):
            vi, vj = float(gp.vertices[v, 0]), float(gp.vertices[v, 1])
            hit = merged.nearest_vertex_within(vi, vj, 1.0)
            mapping.append(hit if hit is not None else merged.add_vertex(vi, vj))
        for a, b in gp.edges:
            if (int(a), int(b)) in dense_edges:
                continue
            ma, mb = mapping[int(a)], mapping[int(b)]
            if ma != mb:
                merged.add_edge(ma, mb)

    merged_graph = merged.finalize(extent=g_dense.extent)
    kind = "removed-road" if tracing.mode == "reverse" else "new-road"
    props = [c.to_proposal(kind)
             for c in connected_components_of_difference(merged_graph, g_dense)]
    return props, merged_graph, truncated, decisions


def run_update(cfg: PipelineConfig) -> dict:
    """Full pipeline: trace change candidates, filter them, write results."""
    graph_path = _require(cfg.base_graph, "base graph")
    p_new_path = _require(cfg.p_new, "new confidence tensor")
    p_old_path = _require(cfg.p_old, "old confidence tensor")
    m_old_path = _require(cfg.m_old, "old imagery")
    m_new_path = _require(cfg.m_new, "new imagery")

    fallback = GeoTransform(cfg.meters_per_pixel)
    g, transform = load_graph(graph_path, fallback)
    if g.n_vertices == 0 or g.n_edges == 0:
        raise ValueError("graph required: base map has no edges")
    p_new = load_tensor(p_new_path)
    p_old = load_tensor(p_old_path)
    m_old = load_imagery(m_old_path, transform)
    m_new = load_imagery(m_new_path, transform)

    props, _merged, truncated, decisions = trace_tiled(
        g, p_new, p_old, cfg.tracing, transform, cfg.tile_px,
        keep_log=bool(cfg.debug_log))

    scorer = make_scorer(cfg.scorer)
    kept, pruned = filter_proposals(props, m_old, m_new, scorer, cfg.filtering)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.dump_json(out / "proposals.geojson", formats.proposals_to_geojson(kept, transform))
    formats.dump_json(out / "pruned.geojson", formats.proposals_to_geojson(pruned, transform))

    warnings = []
    if truncated:
        warnings.append("tracing stopped at max_steps; proposal set may be incomplete")
    report = {
        "command": "run",
        "config_hash": config_hash(cfg),
        "mode": cfg.tracing.mode,
        "seed": cfg.seed,
        "tile_px": cfg.tile_px,
        "n_base_vertices": g.n_vertices,
        "n_base_edges": g.n_edges,
        "n_candidates": len(props),
        "n_kept": len(kept),
        "n_pruned": len(pruned),
        "truncated": truncated,
        "warnings": warnings,
    }
    formats.dump_json(out / "report.json", report)
    files = ["proposals.geojson", "pruned.geojson", "report.json"]
    if cfg.debug_log:
        write_decision_log(cfg.debug_log, decisions)
    formats.dump_json(out / "manifest.json",
                      {"config_hash": report["config_hash"], "files": sorted(files)})
    return report


def run_sample_pairs(cfg: PipelineConfig, count: int) -> dict:
    """Draw self-supervised pairs from one scene and export the dataset."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    graph_path = _require(cfg.base_graph, "base graph")
    m_old_path = _require(cfg.m_old, "old imagery")
    m_new_path = _require(cfg.m_new, "new imagery")

    fallback = GeoTransform(cfg.meters_per_pixel)
    g, transform = load_graph(graph_path, fallback)
    if g.n_vertices == 0 or g.n_edges == 0:
        raise ValueError("graph required: base map has no edges")
    m_old = load_imagery(m_old_path, transform)
    m_new = load_imagery(m_new_path, transform)

    rng = np.random.default_rng(cfg.seed)
    examples = [sample_training_pair(g, m_old, m_new, cfg.filtering, rng)
                for _ in range(count)]

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = export_dataset(out / "dataset", examples)
    report = {
        "command": "sample-pairs",
        "config_hash": config_hash(cfg),
        "count": count,
        "seed": cfg.seed,
        "stats": stats,
    }
    formats.dump_json(out / "report.json", report)
    formats.dump_json(out / "manifest.json",
                      {"config_hash": report["config_hash"],
                       "files": ["dataset/index.jsonl", "dataset/stats.json", "report.json"]})
    return report


def run_eval(proposals_path: str, truth_path: str, out_dir: str,
             allowlist_path: str | None = None,
             thresholds: list[float] | None = None,
             apls_truth_path: str | None = None,
             apls_prop_path: str | None = None,
             apls_samples: int = 500, seed: int = 0,
             meters_per_pixel: float = 0.6) -> dict:
    """Score proposals against ground truth; optionally PR curve and APLS."""
    props = formats.proposals_from_geojson(
        formats.load_json(_require(proposals_path, "proposals")))
    truth = formats.proposals_from_geojson(
        formats.load_json(_require(truth_path, "ground truth")))
    allow = []
    if allowlist_path:
        allow = formats.proposals_from_geojson(
            formats.load_json(_require(allowlist_path, "allowlist")))
    gt = GroundTruthSet(truth, allow)

    point = match_proposals(props, gt)
    report = {"command": "eval", "match": point.as_dict()}

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if thresholds:
        points = pr_curve(props, gt, thresholds)
        report["pr"] = [p.as_dict() for p in points]
        with open(out / "pr.txt", "w", encoding="utf-8") as f:
            for p in points:
                f.write(p.format_line() + "\n")

    if apls_truth_path and apls_prop_path:
        fallback = GeoTransform(meters_per_pixel)
        g_truth, t_truth = load_graph(_require(apls_truth_path, "truth graph"), fallback)
        g_prop, _ = load_graph(_require(apls_prop_path, "proposal graph"), fallback)
        report["apls"] = apls(g_truth, g_prop, n_samples=apls_samples,
                              rng_seed=seed, transform=t_truth)

    formats.dump_json(out / "eval.json", report)
    return report
