"""New-building detection from per-pixel segmentation rasters.

Candidate buildings are pixels confidently building in the new epoch
but not in the old one; 4-connected components become polygon proposals
whose dilated masks feed the same change filter as roads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import GeoTransform, Proposal, RasterImage
from .graphops import points_segment_distance

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int64)

# Crack-walk steps in (dx, dy); pixels are unit squares, so boundary
# corners live on the integer lattice.
_DELTA = {"e": (1, 0), "s": (0, 1), "w": (-1, 0), "n": (0, -1)}
_LEFT = {"e": "n", "n": "w", "w": "s", "s": "e"}
_RIGHT = {"e": "s", "s": "w", "w": "n", "n": "e"}


@dataclass(frozen=True)
class SegRaster:
    """Single-channel probability raster in [0, 1]."""

    data: np.ndarray
    transform: GeoTransform = GeoTransform()

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"segmentation raster must be 2-d, got shape {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("segmentation probabilities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)


def compare_segmentation(p_old: SegRaster, p_new: SegRaster,
                         t_old: float, t_new: float) -> np.ndarray:
    """Binary change raster: 1 where old < t_old and new > t_new (strict)."""
    if p_old.data.shape != p_new.data.shape:
        raise ValueError(f"raster shapes disagree: {p_old.data.shape} vs {p_new.data.shape}")
    for name, t in (("t_old", t_old), ("t_new", t_new)):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {t!r}")
    return ((p_old.data < t_old) & (p_new.data > t_new)).astype(np.uint8)


def _left_pixel(corner: tuple[int, int], d: str) -> tuple[int, int]:
    x, y = corner
    return {"e": (y - 1, x), "s": (y, x), "w": (y, x - 1), "n": (y - 1, x - 1)}[d]


def _right_pixel(corner: tuple[int, int], d: str) -> tuple[int, int]:
    x, y = corner
    return {"e": (y, x), "s": (y, x - 1), "w": (y - 1, x - 1), "n": (y - 1, x)}[d]


def trace_boundary(mask: np.ndarray, start_pixel: tuple[int, int]) -> np.ndarray:
    """Outer boundary ring of the component containing ``start_pixel``.

    Walks the cracks between pixels clockwise (inside kept on the
    right), starting from the top-left corner of the topmost-leftmost
    pixel; returns the open ring as (n, 2) corner coordinates (x, y)
    with collinear runs merged.
    """
    h, w = mask.shape

    def inside(px: tuple[int, int]) -> bool:
        r, c = px
        return 0 <= r < h and 0 <= c < w and bool(mask[r, c])

    r0, c0 = start_pixel
    if not inside((r0, c0)):
        raise ValueError("start pixel is not inside the mask")
    start = (c0, r0)
    corner, d = start, "e"
    path = [start]
    while True:
        if inside(_left_pixel(corner, d)):
            d = _LEFT[d]
        elif not inside(_right_pixel(corner, d)):
            d = _RIGHT[d]
        dx, dy = _DELTA[d]
        corner = (corner[0] + dx, corner[1] + dy)
        if corner == start:
            break
        path.append(corner)
        if len(path) > 4 * (h + 2) * (w + 2):
            raise RuntimeError("boundary walk failed to close")
    ring = [path[0]]
    for n in range(1, len(path)):
        prev = ring[-1]
        nxt = path[(n + 1) % len(path)]
        cur = path[n]
        if (cur[0] - prev[0]) * (nxt[1] - cur[1]) == (cur[1] - prev[1]) * (nxt[0] - cur[0]):
            continue
        ring.append(cur)
    return np.array(ring, dtype=np.float64)


def extract_polygons(b: np.ndarray, min_area_m2: float = 25.0,
                     transform: GeoTransform | None = None) -> list[Proposal]:
    """Polygonize 4-connected components of a binary raster.

    Components smaller than ``min_area_m2`` (pixel-count area) are
    dropped; each survivor becomes a new-building proposal whose ring
    follows the component's outer pixel boundary.
    """
    if min_area_m2 < 0:
        raise ValueError(f"min_area must be non-negative, got {min_area_m2!r}")
    transform = transform or GeoTransform()
    b = (np.asarray(b) > 0).astype(np.uint8)
    labels, count = ndimage.label(b, structure=_CROSS)
    px_area_m2 = transform.meters_per_pixel ** 2
    props: list[Proposal] = []
    for n in range(1, count + 1):
        component = labels == n
        if component.sum() * px_area_m2 < min_area_m2:
            continue
        rows, cols = np.nonzero(component)
        top = rows.min()
        left = cols[rows == top].min()
        ring = trace_boundary(component, (int(top), int(left)))
        props.append(Proposal(kind="new-building", rings=[ring]))
    return props


def _normalized_ring(ring: np.ndarray) -> np.ndarray:
    ring = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    return ring


def ring_area(ring: np.ndarray) -> float:
    """Shoelace area (absolute) of a polygon ring in px^2."""
    r = _normalized_ring(ring)
    if len(r) < 3:
        return 0.0
    x, y = r[:, 0], r[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def points_in_ring(pts: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test for an (n, 2) point array."""
    r = _normalized_ring(ring)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for n in range(len(r)):
        x1, y1 = r[n]
        x2, y2 = r[(n + 1) % len(r)]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside


def rasterize_rings(rings: list[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    """Fill polygon rings into a binary raster by pixel-center test."""
    h, w = shape
    cc, rr = np.meshgrid(np.arange(w, dtype=np.float64) + 0.5,
                         np.arange(h, dtype=np.float64) + 0.5)
    pts = np.column_stack([cc.ravel(), rr.ravel()])
    out = np.zeros(h * w, dtype=bool)
    for ring in rings:
        out |= points_in_ring(pts, ring)
    return out.reshape(h, w).astype(np.uint8)


def building_mask(prop: Proposal, buffer_m: float,
                  transform: GeoTransform | None = None,
                  window: tuple[int, int, int, int] | None = None) -> RasterImage:
    """Binary mask of the proposal polygon dilated by ``buffer_m``."""
    if prop.rings is None or not prop.rings:
        raise ValueError("building proposal has no polygon rings")
    if buffer_m < 0:
        raise ValueError(f"buffer must be non-negative, got {buffer_m!r}")
    transform = transform or GeoTransform()
    buf_px = transform.m_to_px(buffer_m)
    outer = _normalized_ring(prop.rings[0])
    if len(outer) < 3 or ring_area(outer) <= 0.0:
        raise ValueError("degenerate building polygon")
    if window is None:
        window = (int(math.floor(prop.bbox[0] - buf_px)) - 1,
                  int(math.floor(prop.bbox[1] - buf_px)) - 1,
                  int(math.ceil(prop.bbox[2] + buf_px)) + 2,
                  int(math.ceil(prop.bbox[3] + buf_px)) + 2)
    i0, j0, i1, j1 = window
    if i1 <= i0 or j1 <= j0:
        raise ValueError(f"degenerate window: {window}")
    cc, rr = np.meshgrid(np.arange(i0, i1, dtype=np.float64),
                         np.arange(j0, j1, dtype=np.float64))
    pts = np.column_stack([cc.ravel(), rr.ravel()])
    hit = points_in_ring(pts, outer)
    if buf_px > 0:
        for n in range(len(outer)):
            a = outer[n]
            b = outer[(n + 1) % len(outer)]
            hit |= points_segment_distance(pts, a, b) <= buf_px
    return RasterImage(hit.reshape(j1 - j0, i1 - i0).astype(np.uint8))
