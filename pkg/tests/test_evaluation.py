import numpy as np
import pytest

from mapdiff import (
    GeoTransform,
    GroundTruthSet,
    PRPoint,
    Proposal,
    RoadGraph,
    apls,
    match_proposals,
    pr_curve,
)

from conftest import random_connected_graph


def _prop(x0, y0, x1, y1, kind="new-road", score=None):
    g = RoadGraph(np.array([[x0, y0], [x1, y1]], dtype=float),
                  np.array([[0, 1]]), np.zeros(2, bool))
    return Proposal(kind=kind, graph=g, score=score)


def test_touching_boxes_count_as_match():
    truth = GroundTruthSet([_prop(0, 0, 10, 10)])
    point = match_proposals([_prop(10, 10, 20, 20)], truth)
    assert point.precision == 1.0 and point.recall == 1.0


def test_allowlist_discards_from_denominator():
    truth = GroundTruthSet([_prop(0, 0, 10, 10)],
                           allowlist=[_prop(100, 100, 120, 120)])
    props = [_prop(5, 5, 15, 15), _prop(105, 105, 110, 110)]
    point = match_proposals(props, truth)
    assert point.n_proposals == 1  # allowlist hit removed, not penalized
    assert point.precision == 1.0 and point.recall == 1.0
    # a proposal missing both truth and allowlist stays in the denominator
    point = match_proposals(props + [_prop(500, 500, 510, 510)], truth)
    assert point.n_proposals == 2
    assert point.precision == 0.5


def test_one_proposal_may_cover_several_truths():
    truth = GroundTruthSet([_prop(0, 0, 10, 10), _prop(20, 0, 30, 10)])
    point = match_proposals([_prop(0, 5, 30, 6)], truth)
    assert point.matched_proposals == 1
    assert point.matched_truth == 2
    assert point.recall == 1.0


def test_empty_edge_conventions():
    truth = GroundTruthSet([_prop(0, 0, 10, 10)])
    point = match_proposals([], truth)
    assert point.precision == 1.0 and point.recall == 0.0
    point = match_proposals([_prop(0, 0, 5, 5)], GroundTruthSet([]))
    assert point.recall == 0.0 and point.precision == 0.0


def test_mixed_kind_truth_rejected():
    ring = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
    building = Proposal(kind="new-building", rings=[ring])
    with pytest.raises(ValueError):
        GroundTruthSet([_prop(0, 0, 10, 10), building])


def test_matching_agrees_with_brute_force():
    rng = np.random.default_rng(99)

    def boxes_overlap(a, b):
        return (a[0] <= b[2] and b[0] <= a[2]
                and a[1] <= b[3] and b[1] <= a[3])

    def rand_prop():
        x0, y0 = rng.uniform(0, 900, 2)
        dx, dy = rng.uniform(1, 100, 2)
        return _prop(x0, y0, x0 + dx, y0 + dy)

    for _ in range(200):
        props = [rand_prop() for _ in range(rng.integers(0, 9))]
        truth = [rand_prop() for _ in range(rng.integers(0, 6))]
        allow = [rand_prop() for _ in range(rng.integers(0, 4))]
        point = match_proposals(props, GroundTruthSet(truth, allow))

        matched_p = discarded = 0
        hit = set()
        for p in props:
            hits = {n for n, t in enumerate(truth)
                    if boxes_overlap(p.bbox, t.bbox)}
            if hits:
                matched_p += 1
                hit |= hits
            elif any(boxes_overlap(p.bbox, a.bbox) for a in allow):
                discarded += 1
        denom = len(props) - discarded
        assert point.matched_proposals == matched_p
        assert point.matched_truth == len(hit)
        assert point.n_proposals == denom
        assert point.precision == (matched_p / denom if denom else 1.0)
        assert point.recall == (len(hit) / len(truth) if truth else 0.0)


def test_pr_point_serialization():
    point = PRPoint(precision=0.5, recall=0.25, matched_proposals=1,
                    matched_truth=1, n_proposals=2, n_truth=4)
    assert point.format_line() == "- 0.500000 0.250000 1 1 2 4"
    assert "threshold" not in point.as_dict()
    with_t = PRPoint(precision=1.0, recall=1.0, matched_proposals=3,
                     matched_truth=3, n_proposals=3, n_truth=3, threshold=0.9)
    assert with_t.format_line().startswith("0.900000 ")
    assert with_t.as_dict()["threshold"] == 0.9


def test_pr_curve_sweeps_thresholds():
    truth = GroundTruthSet([_prop(0, 0, 10, 10), _prop(50, 50, 60, 60)])
    props = [_prop(2, 2, 8, 8, score=0.1),
             _prop(52, 52, 58, 58, score=0.5),
             _prop(200, 200, 210, 210, score=0.9)]
    points = pr_curve(props, truth, [0.05, 0.3, 0.7, 1.0])
    assert [p.threshold for p in points] == [0.05, 0.3, 0.7, 1.0]
    assert points[0].n_proposals == 0 and points[0].precision == 1.0
    assert points[1].recall == 0.5
    assert points[2].recall == 1.0 and points[2].precision == 1.0
    assert points[3].precision == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        pr_curve([_prop(0, 0, 1, 1)], truth, [0.5])


def test_apls_identity_is_exactly_one():
    rng = np.random.default_rng(4)
    for _ in range(5):
        g = random_connected_graph(rng)
        assert apls(g, g, n_samples=100, transform=GeoTransform(0.6)) == 1.0


def test_apls_input_validation():
    rng = np.random.default_rng(4)
    g = random_connected_graph(rng)
    empty = RoadGraph(np.zeros((0, 2)), np.zeros((0, 2), dtype=int),
                      np.zeros(0, bool))
    with pytest.raises(ValueError):
        apls(empty, g)
    with pytest.raises(ValueError):
        apls(g, g, n_samples=0)
    assert apls(g, empty) == 0.0


def test_apls_snap_radius():
    t = GeoTransform(0.6)
    verts = np.array([[0.0, 0.0], [50.0, 0.0], [100.0, 0.0]])
    edges = np.array([[0, 1], [1, 2]])
    g = RoadGraph(verts, edges, np.zeros(3, bool))
    near = RoadGraph(verts + (5.0, 0.0), edges, np.zeros(3, bool))
    far = RoadGraph(verts + (100.0, 300.0), edges, np.zeros(3, bool))
    # a rigid shift preserves path lengths, so within snap range the
    # score stays perfect; beyond it nothing snaps at all
    assert apls(g, near, n_samples=64, transform=t) == 1.0
    assert apls(g, far, n_samples=64, transform=t) == 0.0


def test_apls_deterministic_and_deletion_monotone():
    rng = np.random.default_rng(21)
    t = GeoTransform(0.6)
    for _ in range(10):
        g = random_connected_graph(rng, n=14, extra_edges=5)
        a = apls(g, g, n_samples=200, rng_seed=7, transform=t)
        b = apls(g, g, n_samples=200, rng_seed=7, transform=t)
        assert a == b == 1.0
        order = rng.permutation(g.n_edges)
        prev = 1.0
        for drop in range(1, g.n_edges):
            keep = np.sort(order[drop:])
            sub = RoadGraph(g.vertices, g.edges[keep], g.base, extent=g.extent)
            score = apls(g, sub, n_samples=200, rng_seed=7, transform=t)
            assert score <= prev + 1e-12
            prev = score
