"""File and wire formats: CTNS tensors, GeoJSON graphs/proposals, framing.

CTNS is the bit-exact tensor exchange format used across the toolchain:
magic ``CTNS``, five little-endian u32 fields (version=1, height, width,
channels, scale_factor), then height*width*channels little-endian float32
values in row-major (j, i, k) order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import (
    GeoTransform,
    Proposal,
    RoadGraph,
    N_CHANNELS,
)

CTNS_MAGIC = b"CTNS"
CTNS_VERSION = 1
_HEADER = struct.Struct("<4s5I")

ERROR_MAGIC = b"CERR"


def encode_ctns(data: np.ndarray, scale_factor: int = 1) -> bytes:
    """Serialize an (h, w, c) float32 array to CTNS bytes."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (h, w, c) array, got shape {arr.shape}")
    h, w, c = arr.shape
    header = _HEADER.pack(CTNS_MAGIC, CTNS_VERSION, h, w, c, int(scale_factor))
    return header + arr.tobytes(order="C")


def decode_ctns(blob: bytes) -> tuple[np.ndarray, int]:
    """Parse CTNS bytes into ((h, w, c) float32 array, scale_factor)."""
    if len(blob) < _HEADER.size:
        raise ValueError("truncated CTNS header")
    magic, version, h, w, c, scale = _HEADER.unpack_from(blob)
    if magic != CTNS_MAGIC:
        raise ValueError(f"bad CTNS magic: {magic!r}")
    if version != CTNS_VERSION:
        raise ValueError(f"unsupported CTNS version: {version}")
    expected = _HEADER.size + 4 * h * w * c
    if len(blob) != expected:
        raise ValueError(f"CTNS payload length {len(blob)} != expected {expected}")
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    return arr.copy(), scale


def write_ctns(path: str | Path, data: np.ndarray, scale_factor: int = 1) -> None:
    Path(path).write_bytes(encode_ctns(data, scale_factor))


def read_ctns(path: str | Path) -> tuple[np.ndarray, int]:
    return decode_ctns(Path(path).read_bytes())


def write_frame(stream, payload: bytes) -> None:
    """Length-prefixed frame: u64 little-endian byte count, then payload."""
    stream.write(struct.pack("<Q", len(payload)))
    stream.write(payload)
    stream.flush()


def read_frame(stream) -> bytes:
    header = _read_exact(stream, 8)
    (length,) = struct.unpack("<Q", header)
    if length > (1 << 32):
        raise ValueError(f"frame length {length} implausibly large")
    return _read_exact(stream, length)


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise EOFError(f"stream closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def encode_error_frame(message: str) -> bytes:
    msg = message.encode("utf-8")
    return ERROR_MAGIC + struct.pack("<I", len(msg)) + msg


def decode_error_frame(payload: bytes) -> str | None:
    """Return the error message if the payload is an error frame, else None."""
    if not payload.startswith(ERROR_MAGIC):
        return None
    (n,) = struct.unpack_from("<I", payload, 4)
    return payload[8:8 + n].decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# GeoJSON
# ---------------------------------------------------------------------------


def _coord_out(pt, transform: GeoTransform | None) -> list[float]:
    if transform is None:
        return [float(pt[0]), float(pt[1])]
    x, y = transform.px_to_world(float(pt[0]), float(pt[1]))
    return [x, y]


def _coord_in(pt, transform: GeoTransform | None) -> tuple[float, float]:
    if transform is None:
        return (float(pt[0]), float(pt[1]))
    return transform.world_to_px(float(pt[0]), float(pt[1]))


def _transform_header(transform: GeoTransform | None) -> dict:
    if transform is None:
        return {}
    return {"transform": {
        "meters_per_pixel": transform.meters_per_pixel,
        "origin": [transform.origin[0], transform.origin[1]],
    }}


def _parse_transform(obj: dict) -> GeoTransform | None:
    t = obj.get("transform")
    if t is None:
        return None
    return GeoTransform(meters_per_pixel=float(t["meters_per_pixel"]),
                        origin=(float(t["origin"][0]), float(t["origin"][1])))


def graph_to_geojson(g: RoadGraph, transform: GeoTransform | None = None) -> dict:
    """One LineString feature per edge, with a ``base`` property.

    An edge is marked base when both endpoints are base vertices.
    Isolated vertices are not representable and are dropped.
    """
    features = []
    for a, b in g.edges:
        a, b = int(a), int(b)
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [_coord_out(g.vertices[a], transform),
                                _coord_out(g.vertices[b], transform)],
            },
            "properties": {"base": bool(g.base[a] and g.base[b])},
        })
    out = {"type": "FeatureCollection", "features": features}
    out.update(_transform_header(transform))
    return out


def graph_from_geojson(obj: dict) -> tuple[RoadGraph, GeoTransform | None]:
    """Inverse of graph_to_geojson; vertices deduplicated by exact coordinate."""
    transform = _parse_transform(obj)
    index: dict[tuple[float, float], int] = {}
    verts: list[tuple[float, float]] = []
    base: list[bool] = []
    edges: list[tuple[int, int]] = []
    edge_seen: set[tuple[int, int]] = set()

    def vid(pt) -> int:
        key = _coord_in(pt, transform)
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
            base.append(False)
        return index[key]

    for feat in obj.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            continue
        coords = geom.get("coordinates", [])
        is_base = bool((feat.get("properties") or {}).get("base", False))
        for p, q in zip(coords, coords[1:]):
            a, b = vid(p), vid(q)
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            if key not in edge_seen:
                edge_seen.add(key)
                edges.append(key)
            if is_base:
                base[a] = True
                base[b] = True
    g = RoadGraph(np.array(verts, dtype=np.float64).reshape(-1, 2),
                  np.array(edges, dtype=np.int64).reshape(-1, 2),
                  np.array(base, dtype=bool))
    return g, transform


def proposals_to_geojson(props: list[Proposal], transform: GeoTransform | None = None) -> dict:
    features = []
    for p in props:
        if p.graph is not None:
            lines = []
            for a, b in p.graph.edges:
                lines.append([_coord_out(p.graph.vertices[int(a)], transform),
                              _coord_out(p.graph.vertices[int(b)], transform)])
            geometry = {"type": "MultiLineString", "coordinates": lines}
        else:
            rings = []
            for ring in p.rings or []:
                pts = [_coord_out(pt, transform) for pt in ring]
                if pts and pts[0] != pts[-1]:
                    pts.append(pts[0])
                rings.append(pts)
            geometry = {"type": "Polygon", "coordinates": rings}
        lo = _coord_out(p.bbox[:2], transform)
        hi = _coord_out(p.bbox[2:], transform)
        features.append({
            "type": "Feature",
            "bbox": [lo[0], lo[1], hi[0], hi[1]],
            "geometry": geometry,
            "properties": {"kind": p.kind, "score": p.score},
        })
    out = {"type": "FeatureCollection", "features": features}
    out.update(_transform_header(transform))
    return out


def proposals_from_geojson(obj: dict) -> list[Proposal]:
    transform = _parse_transform(obj)
    props: list[Proposal] = []
    for feat in obj.get("features", []):
        properties = feat.get("properties") or {}
        kind = properties.get("kind", "new-road")
        score = properties.get("score")
        geom = feat.get("geometry") or {}
        if geom.get("type") == "MultiLineString":
            index: dict[tuple[float, float], int] = {}
            verts: list[tuple[float, float]] = []
            edges = []
            for line in geom.get("coordinates", []):
                for p, q in zip(line, line[1:]):
                    pts = []
                    for raw in (p, q):
                        key = _coord_in(raw, transform)
                        if key not in index:
                            index[key] = len(verts)
                            verts.append(key)
                        pts.append(index[key])
                    if pts[0] != pts[1]:
                        edges.append((min(pts), max(pts)))
            g = RoadGraph(np.array(verts).reshape(-1, 2),
                          np.array(sorted(set(edges)), dtype=np.int64).reshape(-1, 2),
                          np.zeros(len(verts), dtype=bool))
            props.append(Proposal(kind=kind, graph=g, score=score))
        elif geom.get("type") == "Polygon":
            rings = [np.array([_coord_in(pt, transform) for pt in ring])
                     for ring in geom.get("coordinates", [])]
            props.append(Proposal(kind=kind, rings=rings, score=score))
        else:
            raise ValueError(f"unsupported proposal geometry: {geom.get('type')!r}")
    return props


# ---------------------------------------------------------------------------
# Deterministic JSON helpers
# ---------------------------------------------------------------------------


def dump_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def append_jsonl(stream, record: dict) -> None:
    stream.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out
