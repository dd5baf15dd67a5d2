"""Command line front end for the map update pipeline."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import formats
from .buildings import SegRaster, compare_segmentation, extract_polygons
from .core import GeoTransform
from .filtering import filter_proposals, make_scorer
from .pipeline import (
    PipelineConfig,
    _require,
    config_from_ini,
    load_graph,
    load_imagery,
    load_tensor,
    run_eval,
    run_sample_pairs,
    run_update,
)
from .synth import SceneParams, generate_scene, write_scene
from .tracing import TracingConfig, trace_changes, write_decision_log


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = config_from_ini(args.config) if args.config else PipelineConfig()
    for key in ("m_old", "m_new", "p_old", "p_new", "base_graph"):
        value = getattr(args, key, None)
        if value:
            setattr(cfg, key, value)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scorer", None):
        cfg.scorer = args.scorer
    if getattr(args, "debug_log", None):
        cfg.debug_log = args.debug_log

    t_over = {}
    for key in ("t_new", "t_old", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            t_over[key] = value
    if getattr(args, "plain", False):
        t_over["change_seeking"] = False
    if t_over:
        cfg.tracing = dataclasses.replace(cfg.tracing, **t_over)
    if getattr(args, "t_filter", None) is not None:
        cfg.filtering = dataclasses.replace(cfg.filtering, t_filter=args.t_filter)
    if getattr(args, "meters_per_pixel", None) is not None:
        cfg.meters_per_pixel = args.meters_per_pixel
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    report = run_update(_build_config(args))
    print(f"run: {report['n_kept']} kept, {report['n_pruned']} pruned "
          f"of {report['n_candidates']} candidates -> {args.out or 'run'}")
    for line in report["warnings"]:
        print(f"warning: {line}", file=sys.stderr)
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    g, transform = load_graph(_require(cfg.base_graph, "base graph"),
                              GeoTransform(cfg.meters_per_pixel))
    if g.n_vertices == 0 or g.n_edges == 0:
        raise ValueError("graph required: base map has no edges")
    p_new = load_tensor(_require(cfg.p_new, "new confidence tensor"))
    p_old = load_tensor(_require(cfg.p_old, "old confidence tensor"))
    res = trace_changes(g, p_new, p_old, cfg.tracing, transform,
                        keep_log=bool(cfg.debug_log))
    formats.dump_json(args.out_file,
                      formats.proposals_to_geojson(res.proposals, transform))
    if cfg.debug_log:
        write_decision_log(cfg.debug_log, res.decisions)
    suffix = " (truncated)" if res.truncated else ""
    print(f"trace: {len(res.proposals)} candidates -> {args.out_file}{suffix}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    obj = formats.load_json(_require(args.proposals, "proposals"))
    props = formats.proposals_from_geojson(obj)
    transform = GeoTransform(cfg.meters_per_pixel)
    m_old = load_imagery(_require(cfg.m_old, "old imagery"), transform)
    m_new = load_imagery(_require(cfg.m_new, "new imagery"), transform)
    kept, pruned = filter_proposals(props, m_old, m_new,
                                    make_scorer(cfg.scorer), cfg.filtering)
    formats.dump_json(args.out_file, formats.proposals_to_geojson(kept, transform))
    if args.pruned_file:
        formats.dump_json(args.pruned_file, formats.proposals_to_geojson(pruned, transform))
    print(f"filter: kept {len(kept)} of {len(props)} -> {args.out_file}")
    return 0


def cmd_sample_pairs(args: argparse.Namespace) -> int:
    report = run_sample_pairs(_build_config(args), args.count)
    stats = report["stats"]
    print(f"sample-pairs: {stats['count']} pairs "
          f"({stats['n_matching']} matching) -> {report['config_hash'][:12]}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    thresholds = None
    if args.thresholds:
        thresholds = [float(x) for x in args.thresholds.split(",") if x.strip()]
    report = run_eval(args.proposals, args.truth, args.out,
                      allowlist_path=args.allowlist, thresholds=thresholds,
                      apls_truth_path=args.apls_truth,
                      apls_prop_path=args.apls_prop,
                      apls_samples=args.apls_samples,
                      seed=args.seed if args.seed is not None else 0,
                      meters_per_pixel=args.meters_per_pixel)
    m = report["match"]
    line = f"eval: precision {m['precision']:.4f} recall {m['recall']:.4f}"
    if "apls" in report:
        line += f" apls {report['apls']:.4f}"
    print(line)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    params = SceneParams(
        size_px=args.size,
        n_new=args.n_new,
        n_distractors=args.n_distractors,
        n_activity=args.n_activity,
        noise_sigma=args.noise,
        plant_epoch=args.plant_epoch,
        seed=args.seed if args.seed is not None else 0,
        meters_per_pixel=args.meters_per_pixel,
    )
    scene = generate_scene(params)
    write_scene(scene, args.out)
    print(f"synth: scene seed {scene.seed} with {params.n_new} planted roads -> {args.out}")
    return 0


def cmd_buildings(args: argparse.Namespace) -> int:
    transform = GeoTransform(args.meters_per_pixel)
    rasters = []
    for path in (args.p_old, args.p_new):
        data, _scale = formats.read_ctns(_require(path, "segmentation raster"))
        if data.shape[2] != 1:
            raise ValueError(f"expected 1-channel raster, got {data.shape[2]} channels: {path}")
        rasters.append(SegRaster(data[:, :, 0], transform))
    b = compare_segmentation(rasters[0], rasters[1], args.t_old, args.t_new)
    props = extract_polygons(b, min_area_m2=args.min_area, transform=transform)
    n_raw = len(props)
    if args.m_old and args.m_new:
        cfg = _build_config(args)
        m_old = load_imagery(_require(args.m_old, "old imagery"), transform)
        m_new = load_imagery(_require(args.m_new, "new imagery"), transform)
        props, _pruned = filter_proposals(props, m_old, m_new,
                                          make_scorer(cfg.scorer), cfg.filtering)
    formats.dump_json(args.out_file, formats.proposals_to_geojson(props, transform))
    print(f"buildings: {len(props)} of {n_raw} candidates -> {args.out_file}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--meters-per-pixel", type=float, default=0.6)


def _add_tracing_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-new", type=float, default=None, help="new-epoch confidence gate")
    p.add_argument("--t-old", type=float, default=None, help="old-epoch confidence ceiling")
    p.add_argument("--mode", choices=("forward", "reverse"), default=None)
    p.add_argument("--plain", action="store_true",
                   help="gate on the new epoch only (no change seeking)")
    p.add_argument("--debug-log", default=None, help="write per-step decisions here")


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-filter", type=float, default=None, help="keep proposals scoring below this")
    p.add_argument("--scorer", default=None, help='"mock" or "cmd:<argv>"')


def _add_path_flags(p: argparse.ArgumentParser, keys: tuple[str, ...]) -> None:
    flags = {"m_old": "--m-old", "m_new": "--m-new", "p_old": "--p-old",
             "p_new": "--p-new", "base_graph": "--base-graph"}
    for key in keys:
        p.add_argument(flags[key], dest=key, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapdiff",
        description="Detect newly built and removed roads and buildings "
                    "by comparing two imagery epochs against the base map.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="trace, filter, and write a full update run")
    _add_common(p)
    _add_path_flags(p, ("m_old", "m_new", "p_old", "p_new", "base_graph"))
    _add_tracing_flags(p)
    _add_filter_flags(p)
    p.add_argument("--out", default=None, help="run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="trace change candidates only")
    _add_common(p)
    _add_path_flags(p, ("p_old", "p_new", "base_graph"))
    _add_tracing_flags(p)
    p.add_argument("--out", dest="out_file", required=True, help="candidates GeoJSON")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("filter", help="score and filter traced candidates")
    _add_common(p)
    _add_path_flags(p, ("m_old", "m_new"))
    _add_filter_flags(p)
    p.add_argument("--proposals", required=True, help="candidates GeoJSON")
    p.add_argument("--out", dest="out_file", required=True, help="kept GeoJSON")
    p.add_argument("--pruned", dest="pruned_file", default=None, help="pruned GeoJSON")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sample-pairs", help="export self-supervised training pairs")
    _add_common(p)
    _add_path_flags(p, ("m_old", "m_new", "base_graph"))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", default=None, help="run directory")
    p.set_defaults(func=cmd_sample_pairs)

    p = sub.add_parser("eval", help="match proposals against ground truth")
    _add_common(p)
    p.add_argument("--proposals", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--allowlist", default=None)
    p.add_argument("--thresholds", default=None, help="comma-separated filter thresholds")
    p.add_argument("--apls-truth", default=None, help="truth graph GeoJSON")
    p.add_argument("--apls-prop", default=None, help="proposal graph GeoJSON")
    p.add_argument("--apls-samples", type=int, default=500)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    _add_common(p)
    p.add_argument("--out", required=True, help="scene directory")
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--n-new", type=int, default=3)
    p.add_argument("--n-distractors", type=int, default=5)
    p.add_argument("--n-activity", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--plant-epoch", choices=("new", "old"), default="new")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("buildings", help="polygonize building changes from segmentation")
    _add_common(p)
    _add_path_flags(p, ("m_old", "m_new"))
    _add_filter_flags(p)
    p.add_argument("--p-old", dest="p_old", required=True, help="old 1-channel CTNS")
    p.add_argument("--p-new", dest="p_new", required=True, help="new 1-channel CTNS")
    p.add_argument("--t-old", dest="t_old", type=float, default=0.4)
    p.add_argument("--t-new", dest="t_new", type=float, default=0.6)
    p.add_argument("--min-area", type=float, default=25.0, help="m^2")
    p.add_argument("--out", dest="out_file", required=True, help="polygons GeoJSON")
    p.set_defaults(func=cmd_buildings)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
