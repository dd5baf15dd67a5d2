import math

import numpy as np
import pytest

from mapdiff import (
    GeoTransform,
    Proposal,
    SegRaster,
    building_mask,
    compare_segmentation,
    extract_polygons,
    rasterize_rings,
    ring_area,
)
from mapdiff.buildings import points_in_ring, trace_boundary

T1 = GeoTransform(1.0)


def _seg(arr, t=T1):
    return SegRaster(np.asarray(arr, dtype=np.float32), t)


def test_segraster_validation():
    with pytest.raises(ValueError):
        SegRaster(np.full((4, 4), 1.5, dtype=np.float32))
    with pytest.raises(ValueError):
        SegRaster(np.zeros((4, 4, 2), dtype=np.float32))
    raster = _seg(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        raster.data[0, 0] = 1.0  # read-only view


def test_compare_extremes():
    zero = _seg(np.zeros((6, 6)))
    one = _seg(np.ones((6, 6)))
    assert compare_segmentation(zero, one, 0.5, 0.5).all()
    # identical rasters can never be below t_old and above t_new at once
    for raster in (zero, one, _seg(np.full((6, 6), 0.5))):
        assert not compare_segmentation(raster, raster, 0.3, 0.3).any()


def test_compare_matches_pixel_loop():
    rng = np.random.default_rng(8)
    old = rng.uniform(0, 1, (12, 12)).astype(np.float32)
    new = rng.uniform(0, 1, (12, 12)).astype(np.float32)
    t_old, t_new = 0.45, 0.55
    b = compare_segmentation(_seg(old), _seg(new), t_old, t_new)
    for r in range(12):
        for c in range(12):
            want = 1 if (old[r, c] < t_old and new[r, c] > t_new) else 0
            assert b[r, c] == want
    # strictness: values exactly at a threshold never fire
    eq = _seg(np.full((3, 3), 0.5))
    assert not compare_segmentation(eq, eq, 0.5, 0.5).any()


def test_compare_monotone_in_t_new():
    rng = np.random.default_rng(9)
    old = _seg(rng.uniform(0, 1, (20, 20)))
    new = _seg(rng.uniform(0, 1, (20, 20)))
    lo = compare_segmentation(old, new, 0.5, 0.3)
    hi = compare_segmentation(old, new, 0.5, 0.8)
    assert not (hi & ~lo).any()


def test_compare_validation():
    with pytest.raises(ValueError):
        compare_segmentation(_seg(np.zeros((4, 4))), _seg(np.zeros((5, 5))),
                             0.5, 0.5)
    with pytest.raises(ValueError):
        compare_segmentation(_seg(np.zeros((4, 4))), _seg(np.zeros((4, 4))),
                             -0.1, 0.5)


def test_single_block_polygon():
    b = np.zeros((32, 32), dtype=np.uint8)
    b[5:15, 8:18] = 1
    props = extract_polygons(b, min_area_m2=25.0, transform=T1)
    assert len(props) == 1
    prop = props[0]
    assert prop.kind == "new-building"
    ring = prop.rings[0]
    assert ring_area(ring) == pytest.approx(100.0)
    assert prop.bbox == (8.0, 5.0, 18.0, 15.0)


def test_diagonal_blocks_are_separate():
    b = np.zeros((16, 16), dtype=np.uint8)
    b[2:5, 2:5] = 1
    b[5:8, 5:8] = 1  # shares only the corner pixel boundary
    props = extract_polygons(b, min_area_m2=0.0, transform=T1)
    assert len(props) == 2


def test_min_area_drops_small_components():
    b = np.zeros((16, 16), dtype=np.uint8)
    b[1:3, 1:3] = 1        # 4 px
    b[8:14, 8:14] = 1      # 36 px
    props = extract_polygons(b, min_area_m2=25.0, transform=T1)
    assert len(props) == 1
    assert ring_area(props[0].rings[0]) == pytest.approx(36.0)
    # at finer resolution the same pixel block is below the cutoff
    assert extract_polygons(b, min_area_m2=25.0, transform=GeoTransform(0.6)) == []


def _flood_count(b):
    # independent 4-connected component count (BFS over the raster)
    seen = np.zeros_like(b, dtype=bool)
    count = 0
    h, w = b.shape
    for r in range(h):
        for c in range(w):
            if not b[r, c] or seen[r, c]:
                continue
            count += 1
            stack = [(r, c)]
            seen[r, c] = True
            while stack:
                pr, pc = stack.pop()
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    qr, qc = pr + dr, pc + dc
                    if 0 <= qr < h and 0 <= qc < w and b[qr, qc] \
                            and not seen[qr, qc]:
                        seen[qr, qc] = True
                        stack.append((qr, qc))
    return count


def test_component_count_matches_flood_fill():
    rng = np.random.default_rng(10)
    for _ in range(20):
        b = (rng.uniform(0, 1, (24, 24)) < 0.35).astype(np.uint8)
        props = extract_polygons(b, min_area_m2=0.0, transform=T1)
        assert len(props) == _flood_count(b)


def test_boundary_rasterizes_back_to_component():
    # hole-free shapes: the traced ring must reproduce the pixel set
    shapes = []
    rect = np.zeros((20, 20), dtype=np.uint8)
    rect[3:9, 4:16] = 1
    shapes.append(rect)
    ell = np.zeros((20, 20), dtype=np.uint8)
    ell[2:12, 2:6] = 1
    ell[8:12, 2:16] = 1
    shapes.append(ell)
    plus = np.zeros((20, 20), dtype=np.uint8)
    plus[8:12, 2:18] = 1
    plus[2:18, 8:12] = 1
    shapes.append(plus)
    for b in shapes:
        props = extract_polygons(b, min_area_m2=0.0, transform=T1)
        assert len(props) == 1
        filled = rasterize_rings(props[0].rings, b.shape)
        assert np.array_equal(filled, b)


def test_rasterize_preserves_count_on_random_blobs():
    rng = np.random.default_rng(11)
    for _ in range(10):
        b = (rng.uniform(0, 1, (28, 28)) < 0.3).astype(np.uint8)
        props = extract_polygons(b, min_area_m2=0.0, transform=T1)
        rings = [p.rings[0] for p in props]
        again = extract_polygons(rasterize_rings(rings, b.shape),
                                 min_area_m2=0.0, transform=T1)
        assert len(again) == len(props)


def test_trace_boundary_single_pixel():
    b = np.zeros((5, 5), dtype=np.uint8)
    b[2, 3] = 1
    ring = trace_boundary(b, (2, 3))
    assert ring_area(ring) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        trace_boundary(b, (0, 0))  # not a filled pixel


def test_points_in_ring_matches_ray_casting():
    ring = np.array([[2.0, 1.0], [9.0, 2.5], [7.0, 8.0], [4.5, 5.0],
                     [1.0, 7.0]])

    def ray_cast(x, y):
        inside = False
        n = len(ring)
        for a in range(n):
            x0, y0 = ring[a]
            x1, y1 = ring[(a + 1) % n]
            if (y0 > y) != (y1 > y):
                xi = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
                if x < xi:
                    inside = not inside
        return inside

    rng = np.random.default_rng(12)
    pts = rng.uniform(0, 10, (300, 2))
    got = points_in_ring(pts, ring)
    for (x, y), flag in zip(pts, got):
        assert bool(flag) == ray_cast(x, y)


def test_building_mask_square_no_buffer():
    # 20x20 m square: mask area 400 m^2 give or take the boundary ring
    t = GeoTransform(0.6)
    side = 20.0 / 0.6
    x0, y0 = 40.3, 50.8
    ring = np.array([[x0, y0], [x0 + side, y0],
                     [x0 + side, y0 + side], [x0, y0 + side]])
    prop = Proposal(kind="new-building", rings=[ring])
    mask = building_mask(prop, 1e-9, t)
    area_m2 = float(mask.data.sum()) * 0.36
    ring_m2 = 4 * 20.0 * 0.6  # one pixel of slack around the perimeter
    assert abs(area_m2 - 400.0) <= ring_m2


def test_building_mask_dilated_square_area():
    t = GeoTransform(0.6)
    side = 20.0 / 0.6
    x0, y0 = 100.3, 90.8
    ring = np.array([[x0, y0], [x0 + side, y0],
                     [x0 + side, y0 + side], [x0, y0 + side]])
    prop = Proposal(kind="new-building", rings=[ring])
    mask = building_mask(prop, 20.0, t)
    area_m2 = float(mask.data.sum()) * 0.36
    w, b = 20.0, 20.0
    expected = (w + 2 * b) ** 2 - 4 * b * b + math.pi * b * b
    assert abs(area_m2 - expected) / expected < 0.02


def test_building_mask_rejects_degenerate_ring():
    line = np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]])
    prop = Proposal(kind="new-building", rings=[line])
    with pytest.raises(ValueError):
        building_mask(prop, 5.0, T1)


def test_building_mask_window_override():
    ring = np.array([[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0]])
    prop = Proposal(kind="new-building", rings=[ring])
    mask = building_mask(prop, 2.0, T1, window=(0, 0, 40, 30))
    assert mask.data.shape[:2] == (30, 40)
    assert mask.data[15, 15, 0] == 1
    assert mask.data[0, 0, 0] == 0
