"""Shared data types and coordinate conventions.

Conventions used throughout the package:

* ``i`` is the pixel column (x, rightward), ``j`` is the pixel row
  (y, downward).  Angles are measured from the +x axis toward +y, so a
  step of length ``D`` at angle ``a`` goes to ``(i + D*cos(a), j + D*sin(a))``.
* Directional confidences use 64 angle channels; channel ``k`` covers
  angles in ``[k*2pi/64, (k+1)*2pi/64)`` with center ``(k+0.5)*2pi/64``.
* Graph vertex coordinates are stored at image resolution.  Confidence
  tensors are coarser by an integer ``scale_factor`` (default 4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_CHANNELS = 64
TWO_PI = 2.0 * math.pi
CHANNEL_WIDTH = TWO_PI / N_CHANNELS

Bbox = tuple[float, float, float, float]  # (min_i, min_j, max_i, max_j)

ROAD_KINDS = ("new-road", "removed-road")
PROPOSAL_KINDS = ("new-road", "removed-road", "new-building")


def channel_of_angle(alpha: float) -> int:
    """Map an angle (radians) to its direction channel in [0, 63]."""
    if not math.isfinite(alpha):
        raise ValueError(f"angle must be finite, got {alpha!r}")
    a = alpha % TWO_PI
    if a >= TWO_PI:  # fp wrap for tiny negative inputs
        a = 0.0
    k = int(a // CHANNEL_WIDTH)
    return min(k, N_CHANNELS - 1)


def angle_center(k: int) -> float:
    """Center angle of direction channel ``k``."""
    if not 0 <= k < N_CHANNELS:
        raise ValueError(f"channel index out of range: {k}")
    return (k + 0.5) * CHANNEL_WIDTH


def angular_distance(a: float, b: float) -> float:
    """Distance between two angles on the circle, in [0, pi]."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("angles must be finite")
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel<->world mapping: uniform scale plus offset, no rotation."""

    meters_per_pixel: float = 0.6
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.meters_per_pixel) and self.meters_per_pixel > 0):
            raise ValueError(f"meters_per_pixel must be positive, got {self.meters_per_pixel!r}")

    def px_to_world(self, i: float, j: float) -> tuple[float, float]:
        return (self.origin[0] + i * self.meters_per_pixel,
                self.origin[1] + j * self.meters_per_pixel)

    def world_to_px(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.origin[0]) / self.meters_per_pixel,
                (y - self.origin[1]) / self.meters_per_pixel)

    def px_to_m(self, d: float) -> float:
        """Convert a pixel distance to meters."""
        if d < 0:
            raise ValueError(f"distance must be non-negative, got {d!r}")
        return d * self.meters_per_pixel

    def m_to_px(self, d: float) -> float:
        """Convert a meter distance to pixels."""
        if d < 0:
            raise ValueError(f"distance must be non-negative, got {d!r}")
        return d / self.meters_per_pixel


class RoadGraph:
    """Immutable planar graph of pixel-space vertices and undirected edges.

    Each vertex carries a ``base`` flag marking whether it belongs to the
    original map (as opposed to having been traced).  Edges are stored as
    sorted index pairs in insertion order.
    """

    __slots__ = ("_verts", "_base", "_edges", "_edge_set", "_extent", "_adj")

    def __init__(
        self,
        vertices: np.ndarray | list,
        edges: np.ndarray | list,
        base: np.ndarray | list | None = None,
        extent: tuple[int, int] | None = None,
    ):
        verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertex coordinates must be finite")
        n = len(verts)
        if base is None:
            base_arr = np.ones(n, dtype=bool)
        else:
            base_arr = np.asarray(base, dtype=bool).reshape(-1)
            if len(base_arr) != n:
                raise ValueError("base flag array length must match vertex count")
        edge_arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edge_arr):
            edge_arr = np.sort(edge_arr, axis=1)
            if edge_arr.min() < 0 or edge_arr.max() >= n:
                raise ValueError("edge endpoint index out of range")
            if np.any(edge_arr[:, 0] == edge_arr[:, 1]):
                raise ValueError("self-loop edges are not allowed")
        edge_set = frozenset((int(a), int(b)) for a, b in edge_arr)
        if len(edge_set) != len(edge_arr):
            raise ValueError("duplicate edges are not allowed")
        if extent is not None:
            w, h = extent
            if n and (verts[:, 0].min() < 0 or verts[:, 1].min() < 0
                      or verts[:, 0].max() > w or verts[:, 1].max() > h):
                raise ValueError("vertex coordinates outside declared extent")
        verts.setflags(write=False)
        base_arr.setflags(write=False)
        edge_arr.setflags(write=False)
        self._verts = verts
        self._base = base_arr
        self._edges = edge_arr
        self._edge_set = edge_set
        self._extent = extent
        self._adj: list[list[int]] | None = None

    @property
    def vertices(self) -> np.ndarray:
        return self._verts

    @property
    def base(self) -> np.ndarray:
        return self._base

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    @property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return self._edge_set

    @property
    def extent(self) -> tuple[int, int] | None:
        return self._extent

    @property
    def n_vertices(self) -> int:
        return len(self._verts)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._edge_set

    def neighbors(self, v: int) -> list[int]:
        return self._adjacency()[v]

    def _adjacency(self) -> list[list[int]]:
        if self._adj is None:
            adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
            for a, b in self._edges:
                adj[int(a)].append(int(b))
                adj[int(b)].append(int(a))
            for lst in adj:
                lst.sort()
            self._adj = adj
        return self._adj

    def edge_lengths_px(self) -> np.ndarray:
        if not len(self._edges):
            return np.zeros(0)
        d = self._verts[self._edges[:, 1]] - self._verts[self._edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def total_length_px(self) -> float:
        return float(self.edge_lengths_px().sum())

    def builder(self) -> "RoadGraphBuilder":
        """Mutable copy for single-threaded editing sessions."""
        b = RoadGraphBuilder()
        b._verts = [tuple(v) for v in self._verts]
        b._base = list(self._base)
        b._edges = [(int(a), int(b_)) for a, b_ in self._edges]
        b._edge_set = set(self._edge_set)
        return b

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return (np.array_equal(self._verts, other._verts)
                and np.array_equal(self._base, other._base)
                and np.array_equal(self._edges, other._edges))

    def __hash__(self):  # pragma: no cover - graphs are not dict keys
        return id(self)

    def __repr__(self) -> str:
        return f"RoadGraph({self.n_vertices} vertices, {self.n_edges} edges)"


def empty_graph() -> RoadGraph:
    return RoadGraph(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64))


class RoadGraphBuilder:
    """Mutable graph assembly; ``finalize`` freezes into a RoadGraph.

    Optionally maintains a uniform-grid point index so callers can snap
    new points onto nearby existing vertices.
    """

    def __init__(self, grid_cell: float | None = None):
        self._verts: list[tuple[float, float]] = []
        self._base: list[bool] = []
        self._edges: list[tuple[int, int]] = []
        self._edge_set: set[tuple[int, int]] = set()
        self._grid_cell = grid_cell
        self._grid: dict[tuple[int, int], list[int]] = {}

    @property
    def n_vertices(self) -> int:
        return len(self._verts)

    def vertex(self, v: int) -> tuple[float, float]:
        return self._verts[v]

    def is_base(self, v: int) -> bool:
        return self._base[v]

    def add_vertex(self, i: float, j: float, base: bool = False) -> int:
        idx = len(self._verts)
        self._verts.append((float(i), float(j)))
        self._base.append(bool(base))
        if self._grid_cell:
            self._grid.setdefault(self._cell(i, j), []).append(idx)
        return idx

    def add_edge(self, a: int, b: int) -> bool:
        """Add an undirected edge; returns False if it already exists."""
        if a == b:
            raise ValueError("self-loop edge")
        key = (min(a, b), max(a, b))
        if key in self._edge_set:
            return False
        self._edge_set.add(key)
        self._edges.append(key)
        return True

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._edge_set

    def edges_at(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self._verts]
        for a, b in self._edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def _cell(self, i: float, j: float) -> tuple[int, int]:
        c = self._grid_cell or 1.0
        return (int(math.floor(i / c)), int(math.floor(j / c)))

    def rebuild_grid(self, cell: float) -> None:
        self._grid_cell = cell
        self._grid = {}
        for idx, (i, j) in enumerate(self._verts):
            self._grid.setdefault(self._cell(i, j), []).append(idx)

    def nearest_vertex_within(self, i: float, j: float, radius: float) -> int | None:
        """Index of the nearest vertex within ``radius`` pixels, or None."""
        if self._grid_cell is None:
            raise RuntimeError("grid index not initialized; call rebuild_grid")
        ci, cj = self._cell(i, j)
        reach = int(math.ceil(radius / self._grid_cell))
        best = None
        best_d2 = radius * radius
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for idx in self._grid.get((ci + di, cj + dj), ()):
                    vi, vj = self._verts[idx]
                    d2 = (vi - i) ** 2 + (vj - j) ** 2
                    if d2 <= best_d2:
                        if best is None or d2 < best_d2 or idx < best:
                            best = idx
                            best_d2 = d2
        return best

    def finalize(self, extent: tuple[int, int] | None = None) -> RoadGraph:
        return RoadGraph(
            np.array(self._verts, dtype=np.float64).reshape(-1, 2),
            np.array(self._edges, dtype=np.int64).reshape(-1, 2),
            np.array(self._base, dtype=bool),
            extent=extent,
        )


class ConfidenceTensor:
    """Per-pixel, per-direction road presence probabilities.

    Shape is (height, width, 64) float32 with values in [0, 1], at
    ``1/scale_factor`` of image resolution.
    """

    __slots__ = ("data", "scale_factor")

    def __init__(self, data: np.ndarray, scale_factor: int = 4):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != N_CHANNELS:
            raise ValueError(f"confidence tensor must be (h, w, {N_CHANNELS}), got {arr.shape}")
        if not int(scale_factor) >= 1:
            raise ValueError(f"scale_factor must be a positive integer, got {scale_factor!r}")
        lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"confidence values must lie in [0, 1], got range [{lo}, {hi}]")
        arr.setflags(write=False)
        self.data = arr
        self.scale_factor = int(scale_factor)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def image_extent(self) -> tuple[int, int]:
        """(width, height) covered at image resolution."""
        return (self.width * self.scale_factor, self.height * self.scale_factor)


class RasterImage:
    """8-bit multi-channel raster with an attached GeoTransform."""

    __slots__ = ("data", "transform")

    def __init__(self, data: np.ndarray, transform: GeoTransform | None = None):
        arr = np.asarray(data, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or not 1 <= arr.shape[2] <= 4:
            raise ValueError(f"raster must be (h, w, c) with 1<=c<=4, got {arr.shape}")
        self.data = arr
        self.transform = transform or GeoTransform()

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def crop(self, window: tuple[int, int, int, int]) -> "RasterImage":
        """Crop to integer pixel window (i0, j0, i1, j1), half-open."""
        i0, j0, i1, j1 = window
        if not (0 <= i0 < i1 <= self.width and 0 <= j0 < j1 <= self.height):
            raise ValueError(f"window {window} outside raster {self.width}x{self.height}")
        return RasterImage(self.data[j0:j1, i0:i1].copy(), self.transform)


def bbox_of_points(pts: np.ndarray) -> Bbox:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if not len(pts):
        raise ValueError("cannot take bounding box of zero points")
    return (float(pts[:, 0].min()), float(pts[:, 1].min()),
            float(pts[:, 0].max()), float(pts[:, 1].max()))


def bboxes_intersect(a: Bbox, b: Bbox) -> bool:
    """Closed-interval intersection test; touching boxes intersect."""
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def pad_bbox(b: Bbox, pad: float) -> Bbox:
    return (b[0] - pad, b[1] - pad, b[2] + pad, b[3] + pad)


@dataclass
class Proposal:
    """One connected component of candidate change offered as a map update."""

    kind: str
    graph: RoadGraph | None = None
    rings: list[np.ndarray] | None = None
    bbox: Bbox = (0.0, 0.0, 0.0, 0.0)
    score: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in PROPOSAL_KINDS:
            raise ValueError(f"unknown proposal kind: {self.kind!r}")
        if self.kind in ROAD_KINDS:
            if self.graph is None or self.graph.n_edges == 0:
                raise ValueError("road proposal requires a non-empty subgraph")
            if not _is_connected(self.graph):
                raise ValueError("road proposal geometry must be a single connected component")
            self.bbox = bbox_of_points(self.graph.vertices[np.unique(self.graph.edges)])
        else:
            if not self.rings:
                raise ValueError("building proposal requires at least one polygon ring")
            self.rings = [np.asarray(r, dtype=np.float64).reshape(-1, 2) for r in self.rings]
            self.bbox = bbox_of_points(np.vstack(self.rings))


def _is_connected(g: RoadGraph) -> bool:
    used = np.unique(g.edges)
    if not len(used):
        return False
    seen = {int(used[0])}
    stack = [int(used[0])]
    while stack:
        v = stack.pop()
        for w in g.neighbors(v):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return all(int(u) in seen for u in used)
