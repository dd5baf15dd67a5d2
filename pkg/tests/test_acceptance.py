"""End-to-end acceptance suite.

Each test covers one headline guarantee of the package at its stated
tolerance and prints a single [PASS]/[FAIL] line, so the suite doubles
as a release checklist.  Everything runs against the synthetic oracle
scenes with the built-in mock scorer; no trained models are involved.
"""

import json
import math
import time

import numpy as np
import pytest

from mapdiff import (
    FilterConfig,
    GeoTransform,
    MockScorer,
    Proposal,
    RoadGraph,
    SegRaster,
    TracingConfig,
    angle_center,
    angular_distance,
    apls,
    bboxes_intersect,
    building_mask,
    compare_segmentation,
    densify,
    filter_proposals,
    generate_scene,
    mask_from_subgraph,
    match_proposals,
    sample_confidence,
    sample_training_pair,
    scene_ground_truth,
    trace_changes,
    trace_tiled,
)
from mapdiff.cli import main
from mapdiff.pipeline import PipelineConfig

from conftest import random_connected_graph

N_SCENES = 50


def _report(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    print(line)
    assert ok, line


def _run_scene(seed, tracing=None, noise=0.0, use_filter=True):
    s = generate_scene(seed=seed, noise_sigma=noise)
    res = trace_changes(s.base_graph, s.p_new, s.p_old,
                        tracing or TracingConfig(), s.transform)
    props = res.proposals
    if use_filter:
        props, _ = filter_proposals(props, s.m_old, s.m_new, MockScorer(),
                                    FilterConfig())
    return s, props


def test_synthetic_recovery_is_perfect():
    t0 = time.perf_counter()
    worst_p = worst_r = 1.0
    for seed in range(N_SCENES):
        s, props = _run_scene(seed)
        point = match_proposals(props, scene_ground_truth(s))
        worst_p = min(worst_p, point.precision)
        worst_r = min(worst_r, point.recall)
    elapsed = time.perf_counter() - t0
    ok = worst_p == 1.0 and worst_r == 1.0 and elapsed < 60.0
    _report("synthetic recovery: precision=1.0 recall=1.0 in <60s", ok,
            f"precision {worst_p} recall {worst_r} over {N_SCENES} scenes "
            f"in {elapsed:.1f}s")


def test_change_seeking_removes_distractors():
    plain_cfg = TracingConfig(change_seeking=False)
    total_plain_hits = total_seeking_hits = 0
    worst_plain_precision = 1.0
    for seed in range(N_SCENES):
        s = generate_scene(seed=seed)
        dis_boxes = [sel.bbox for sel in s.distractors]

        plain = trace_changes(s.base_graph, s.p_new, s.p_old, plain_cfg,
                              s.transform)
        point = match_proposals(plain.proposals, scene_ground_truth(s))
        worst_plain_precision = min(worst_plain_precision, point.precision)
        total_plain_hits += sum(
            any(bboxes_intersect(p.bbox, b) for b in dis_boxes)
            for p in plain.proposals)

        seeking = trace_changes(s.base_graph, s.p_new, s.p_old,
                                TracingConfig(), s.transform)
        total_seeking_hits += sum(
            any(bboxes_intersect(p.bbox, b) for b in dis_boxes)
            for p in seeking.proposals)
    ok = (worst_plain_precision <= 0.6 and total_plain_hits > 0
          and total_seeking_hits == 0)
    _report("plain tracing precision <=0.6; change seeking drops all "
            "distractors", ok,
            f"plain precision {worst_plain_precision:.3f}, distractor "
            f"proposals plain={total_plain_hits} seeking={total_seeking_hits}")


def test_noise_robustness():
    precisions, recalls = [], []
    for seed in range(N_SCENES):
        s, props = _run_scene(seed, noise=0.1)
        point = match_proposals(props, scene_ground_truth(s))
        precisions.append(point.precision)
        recalls.append(point.recall)
    p, r = min(precisions), min(recalls)
    ok = p >= 0.95 and r >= 0.9
    _report("noise 0.1: precision >=0.95 recall >=0.9", ok,
            f"min precision {p:.3f} min recall {r:.3f}")


def test_metric_oracles():
    rng = np.random.default_rng(1234)

    def overlap(a, b):
        return (a[0] <= b[2] and b[0] <= a[2]
                and a[1] <= b[3] and b[1] <= a[3])

    def rand_props(count):
        out = []
        for _ in range(count):
            x0, y0 = rng.uniform(0, 900, 2)
            dx, dy = rng.uniform(1, 120, 2)
            g = RoadGraph(np.array([[x0, y0], [x0 + dx, y0 + dy]]),
                          np.array([[0, 1]]), np.zeros(2, bool))
            out.append(Proposal(kind="new-road", graph=g))
        return out

    from mapdiff import GroundTruthSet
    match_exact = True
    for _ in range(1000):
        props = rand_props(rng.integers(0, 21))
        truth = rand_props(rng.integers(0, 8))
        allow = rand_props(rng.integers(0, 4))
        point = match_proposals(props, GroundTruthSet(truth, allow))
        matched_p = discarded = 0
        hit = set()
        for p in props:
            hits = {n for n, t in enumerate(truth) if overlap(p.bbox, t.bbox)}
            if hits:
                matched_p += 1
                hit |= hits
            elif any(overlap(p.bbox, a.bbox) for a in allow):
                discarded += 1
        denom = len(props) - discarded
        want_p = matched_p / denom if denom else 1.0
        want_r = len(hit) / len(truth) if truth else 0.0
        if (point.precision, point.recall) != (want_p, want_r):
            match_exact = False
            break

    t = GeoTransform(0.6)
    identity_exact = all(
        apls(g, g, n_samples=100, transform=t) == 1.0
        for g in (random_connected_graph(rng) for _ in range(20)))

    monotone = True
    for _ in range(100):
        g = random_connected_graph(rng, n=12, extra_edges=4)
        prev = apls(g, g, n_samples=100, rng_seed=3, transform=t)
        order = rng.permutation(g.n_edges)
        for drop in (1, 2, 3):
            keep = np.sort(order[drop:])
            sub = RoadGraph(g.vertices, g.edges[keep], g.base, extent=g.extent)
            score = apls(g, sub, n_samples=100, rng_seed=3, transform=t)
            if score > prev + 1e-12:
                monotone = False
            prev = score

    ok = match_exact and identity_exact and monotone
    _report("metric oracles: matching exact, APLS identity 1.0, APLS "
            "deletion-monotone", ok,
            f"matching exact={match_exact} identity={identity_exact} "
            f"monotone={monotone}")


def test_tracing_replay_has_zero_violations():
    cfg = TracingConfig()
    violations = 0
    checked_edges = 0
    for seed in range(20):
        s = generate_scene(seed=1000 + seed)
        res = trace_changes(s.base_graph, s.p_new, s.p_old, cfg, s.transform,
                            keep_log=True)
        extends = [d for d in res.decisions if d.action == "extend"]
        traced_edges = sum(p.graph.n_edges for p in res.proposals)
        checked_edges += traced_edges
        if len(extends) != traced_edges:
            violations += 1

        # rebuild incident-angle state as the log replays, starting from
        # the densified base map
        dense = densify(s.base_graph, cfg.densify_spacing_m, s.transform)
        angles: dict = {}

        def add_angle(p, q):
            key = (round(p[0], 6), round(p[1], 6))
            angles.setdefault(key, []).append(
                math.atan2(q[1] - p[1], q[0] - p[0]) % (2 * math.pi))

        for a, b in dense.edges:
            add_angle(dense.vertices[a], dense.vertices[b])
            add_angle(dense.vertices[b], dense.vertices[a])

        for d in extends:
            if not (d.p_new >= cfg.t_new and d.p_old < cfg.t_old):
                violations += 1
            if abs(sample_confidence(s.p_new, d.i, d.j, d.k) - d.p_new) > 1e-6:
                violations += 1
            if abs(sample_confidence(s.p_old, d.i, d.j, d.k) - d.p_old) > 1e-6:
                violations += 1
            alpha = angle_center(d.k)
            key = (round(d.i, 6), round(d.j, 6))
            for incident in angles.get(key, []):
                if angular_distance(alpha, incident) < cfg.min_angular_sep:
                    violations += 1
            end = d.snapped_to if d.snapped_to is not None else d.target
            add_angle((d.i, d.j), end)
            add_angle(end, (d.i, d.j))
    ok = violations == 0 and checked_edges > 0
    _report("tracing replay: every traced edge satisfies both gates and "
            "the angular rule", ok,
            f"{checked_edges} edges, {violations} violations")


def test_sampler_statistics():
    s = generate_scene(seed=555, size_px=1536, meters_per_pixel=2.0,
                       road_spacing_m=300.0, render_confidence=False)
    cfg = FilterConfig(w_mask_size=256)
    rng = np.random.default_rng(99)
    n = 10_000
    n_matching = n_random = 0
    overlap_violations = distance_violations = zeroing_violations = 0
    for _ in range(n):
        ex = sample_training_pair(s.base_graph, s.m_old, s.m_new, cfg, rng)
        off = ex.mask.data[:, :, 0] == 0
        if ex.crop_old.data[off].any() or ex.crop_new.data[off].any():
            zeroing_violations += 1
        if ex.label == "matching":
            n_matching += 1
            n_random += ex.provenance == "random-window"
            continue
        a, b = ex.window_old, ex.window_new
        if not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]):
            overlap_violations += 1
        d_m = math.hypot(a[0] + 128 - ex.v0[0],
                         a[1] + 128 - ex.v0[1]) * 2.0
        if d_m > cfg.mismatch_max_dist_m:
            distance_violations += 1
    frac_matching = n_matching / n
    frac_random = n_random / n_matching
    ok = (0.48 <= frac_matching <= 0.52 and 0.17 <= frac_random <= 0.23
          and overlap_violations == 0 and distance_violations == 0
          and zeroing_violations == 0)
    _report("sampler statistics over 10k pairs", ok,
            f"matching {frac_matching:.4f}, random-window {frac_random:.4f}, "
            f"violations overlap={overlap_violations} "
            f"distance={distance_violations} zeroing={zeroing_violations}")


def test_geometry_oracles():
    rng = np.random.default_rng(7)
    t06 = GeoTransform(0.6)

    worst_rel = 0.0
    for _ in range(100):
        g = random_connected_graph(rng)
        dense = densify(g, 10.0, t06)
        rel = abs(dense.total_length_px() - g.total_length_px()) \
            / g.total_length_px()
        worst_rel = max(worst_rel, rel)
    densify_ok = worst_rel <= 1e-6

    x0, y0 = 50.2, 80.7
    seg = np.array([[x0, y0, x0 + 100.0 / 0.6, y0]])
    mask = mask_from_subgraph(seg, (0, 0, 260, 130), 20.0, t06)
    stadium = float(mask.data.sum()) * 0.36
    stadium_want = 100 * 40 + math.pi * 400
    stadium_err = abs(stadium - stadium_want) / stadium_want

    side = 20.0 / 0.6
    ring = np.array([[100.3, 90.8], [100.3 + side, 90.8],
                     [100.3 + side, 90.8 + side], [100.3, 90.8 + side]])
    bmask = building_mask(Proposal(kind="new-building", rings=[ring]),
                          20.0, t06)
    square = float(bmask.data.sum()) * 0.36
    square_want = 60.0 ** 2 - 4 * 400.0 + math.pi * 400.0
    square_err = abs(square - square_want) / square_want
    mask_ok = stadium_err < 0.01 and square_err < 0.01

    compare_ok = True
    for _ in range(20):
        old = rng.uniform(0, 1, (16, 16)).astype(np.float32)
        new = rng.uniform(0, 1, (16, 16)).astype(np.float32)
        t_old, t_new = rng.uniform(0.2, 0.8, 2)
        b = compare_segmentation(SegRaster(old, t06), SegRaster(new, t06),
                                 t_old, t_new)
        for r in range(16):
            for c in range(16):
                want = 1 if (old[r, c] < t_old and new[r, c] > t_new) else 0
                if b[r, c] != want:
                    compare_ok = False

    ok = densify_ok and mask_ok and compare_ok
    _report("geometry oracles: densify, mask areas, thresholded compare", ok,
            f"densify rel err {worst_rel:.2e}, stadium err {stadium_err:.4f}, "
            f"square err {square_err:.4f}, compare exact={compare_ok}")


def test_cli_and_tiling_determinism(tmp_path):
    scene_a = tmp_path / "scene_a"
    scene_b = tmp_path / "scene_b"
    for out in (scene_a, scene_b):
        assert main(["synth", "--seed", "42", "--out", str(out)]) == 0
    synth_same = all(
        (scene_a / p.name).read_bytes() == (scene_b / p.name).read_bytes()
        for p in scene_a.iterdir())

    def run(out):
        args = ["run",
                "--m-old", str(scene_a / "m_old.png"),
                "--m-new", str(scene_a / "m_new.png"),
                "--p-old", str(scene_a / "p_old.ctns"),
                "--p-new", str(scene_a / "p_new.ctns"),
                "--base-graph", str(scene_a / "base_graph.geojson"),
                "--out", str(out)]
        assert main(args) == 0

    run(tmp_path / "run_a")
    run(tmp_path / "run_b")
    run_same = all(
        (tmp_path / "run_a" / name).read_bytes()
        == (tmp_path / "run_b" / name).read_bytes()
        for name in ("proposals.geojson", "pruned.geojson"))
    before = (tmp_path / "run_a" / "report.json").read_bytes()
    run(tmp_path / "run_a")
    report_same = (tmp_path / "run_a" / "report.json").read_bytes() == before

    s = generate_scene(seed=42)
    cfg = PipelineConfig()

    def edge_set(tile_px):
        _, merged, _, _ = trace_tiled(s.base_graph, s.p_new, s.p_old,
                                      cfg.tracing, s.transform, tile_px)
        out = set()
        for a, b in merged.edges:
            p = tuple(np.round(merged.vertices[a], 6))
            q = tuple(np.round(merged.vertices[b], 6))
            out.add((min(p, q), max(p, q)))
        return out

    tiles_same = edge_set(4096) == edge_set(512)

    ok = synth_same and run_same and report_same and tiles_same
    _report("determinism: CLI byte-identical reruns, tile partition "
            "invariant", ok,
            f"synth={synth_same} run={run_same} report={report_same} "
            f"tiles={tiles_same}")
