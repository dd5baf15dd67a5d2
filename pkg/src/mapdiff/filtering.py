"""Self-supervised change filtering.

Stage two of the pipeline: rasterize a road mask around each proposal,
crop the two imagery epochs, zero everything outside the mask, and ask a
scorer for the per-pixel probability that the pair is "matching" (same
place, same epoch content).  Real changes make aligned crops look
mismatched, so proposals are kept when their mean matching probability
falls below ``t_filter``.  The same machinery generates the
matching/mismatched training pairs the scorer model learns from.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .core import GeoTransform, Proposal, RasterImage, RoadGraph, pad_bbox
from .graphops import SubgraphSelection, bfs_subgraph, points_segment_distance

LABELS = ("matching", "mismatched")
PROVENANCES = ("same-window", "random-window", "disjoint-window")

Window = tuple[int, int, int, int]  # (i0, j0, i1, j1), half-open pixels


@dataclass
class FilterConfig:
    mask_buffer_m: float = 20.0
    pad_m: float = 20.0
    t_filter: float = 0.98
    t_box_range: tuple[float, float] = (50.0, 150.0)
    mismatch_max_dist_m: float = 2500.0
    w_mask_size: int = 512
    p_matching: float = 0.5
    p_random_window: float = 0.2
    max_retries: int = 50

    def __post_init__(self) -> None:
        for name in ("mask_buffer_m", "pad_m", "mismatch_max_dist_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        lo, hi = self.t_box_range
        if not 0 < lo <= hi:
            raise ValueError(f"t_box_range must be increasing positive, got {self.t_box_range!r}")
        if self.w_mask_size < 1:
            raise ValueError(f"w_mask_size must be positive, got {self.w_mask_size!r}")
        for name in ("p_matching", "p_random_window"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")
        # Out-of-range pruning thresholds degrade to all-keep / all-prune.
        self.t_filter = min(max(float(self.t_filter), 0.0), 1.0)


@dataclass
class PairExample:
    """An aligned (old, new, mask) crop triple for the matching model."""

    crop_old: RasterImage
    crop_new: RasterImage
    mask: RasterImage
    label: str | None = None
    provenance: str | None = None
    window_old: Window | None = None
    window_new: Window | None = None
    v0: tuple[float, float] | None = None
    t_box_m: float | None = None

    def __post_init__(self) -> None:
        shapes = {self.crop_old.data.shape[:2], self.crop_new.data.shape[:2],
                  self.mask.data.shape[:2]}
        if len(shapes) != 1:
            raise ValueError(f"crop/mask dimensions disagree: {shapes}")
        if self.mask.channels != 1:
            raise ValueError("mask must be single-channel")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"unknown label: {self.label!r}")
        if self.provenance is not None and self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance!r}")
        off = self.mask.data[:, :, 0] == 0
        if self.crop_old.data[off].any() or self.crop_new.data[off].any():
            raise ValueError("crops must be zero wherever the mask is zero")

    def to_tensor(self) -> np.ndarray:
        """(h, w, 7) float32: 3 old, 3 new, 1 mask, imagery scaled to [0, 1]."""
        if self.crop_old.channels != 3 or self.crop_new.channels != 3:
            raise ValueError("pair tensors require 3-channel imagery")
        old = self.crop_old.data.astype(np.float32) / 255.0
        new = self.crop_new.data.astype(np.float32) / 255.0
        mask = (self.mask.data[:, :, :1] > 0).astype(np.float32)
        return np.concatenate([old, new, mask], axis=2)


def example_from_tensor(t: np.ndarray) -> PairExample:
    """Inverse of ``PairExample.to_tensor`` (label and windows are lost)."""
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3 or t.shape[2] != 7:
        raise ValueError(f"pair tensor must be (h, w, 7), got {t.shape}")
    mask = (t[:, :, 6:7] > 0.5).astype(np.uint8)
    old = np.clip(np.rint(t[:, :, 0:3] * 255.0), 0, 255).astype(np.uint8) * mask
    new = np.clip(np.rint(t[:, :, 3:6] * 255.0), 0, 255).astype(np.uint8) * mask
    return PairExample(crop_old=RasterImage(old), crop_new=RasterImage(new),
                       mask=RasterImage(mask))


def _zeroed(img: RasterImage, window: Window, mask01: np.ndarray) -> RasterImage:
    crop = img.crop(window)
    return RasterImage(crop.data * mask01[:, :, None], img.transform)


def _segments_of(h) -> np.ndarray:
    if isinstance(h, SubgraphSelection):
        return h.segments()
    if isinstance(h, Proposal):
        if h.graph is None:
            raise TypeError("building proposals need building_mask, not mask_from_subgraph")
        h = h.graph
    if isinstance(h, RoadGraph):
        if not h.n_edges:
            return np.zeros((0, 4))
        return np.hstack([h.vertices[h.edges[:, 0]], h.vertices[h.edges[:, 1]]])
    return np.asarray(h, dtype=np.float64).reshape(-1, 4)


def mask_from_subgraph(h, window: Window, buffer_m: float,
                       transform: GeoTransform | None = None) -> RasterImage:
    """Binary mask over ``window``: 1 within ``buffer_m`` of any edge of h."""
    transform = transform or GeoTransform()
    if not buffer_m > 0:
        raise ValueError(f"buffer must be positive, got {buffer_m!r}")
    i0, j0, i1, j1 = window
    if not (i1 > i0 and j1 > j0):
        raise ValueError(f"degenerate window: {window}")
    buf_px = transform.m_to_px(buffer_m)
    out = np.zeros((j1 - j0, i1 - i0), dtype=np.uint8)
    for seg in _segments_of(h):
        a = seg[:2] - (i0, j0)
        b = seg[2:] - (i0, j0)
        lo_c = max(0, int(math.floor(min(a[0], b[0]) - buf_px)))
        hi_c = min(out.shape[1], int(math.ceil(max(a[0], b[0]) + buf_px)) + 1)
        lo_r = max(0, int(math.floor(min(a[1], b[1]) - buf_px)))
        hi_r = min(out.shape[0], int(math.ceil(max(a[1], b[1]) + buf_px)) + 1)
        if lo_c >= hi_c or lo_r >= hi_r:
            continue
        cc, rr = np.meshgrid(np.arange(lo_c, hi_c, dtype=np.float64),
                             np.arange(lo_r, hi_r, dtype=np.float64))
        pts = np.column_stack([cc.ravel(), rr.ravel()])
        d = points_segment_distance(pts, a, b).reshape(rr.shape)
        out[lo_r:hi_r, lo_c:hi_c] |= (d <= buf_px).astype(np.uint8)
    return RasterImage(out)


class Scorer:
    """Per-pixel matching-probability model interface."""

    def score(self, example: PairExample) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MockScorer(Scorer):
    """Normalized absolute pixel difference, inverted.

    Identical crops score 1.0 (clearly matching); maximally different
    crops score 0.0.  Depends only on masked pixels because both crops
    are zeroed identically outside the mask.
    """

    def score(self, example: PairExample) -> np.ndarray:
        old = example.crop_old.data.astype(np.float32)
        new = example.crop_new.data.astype(np.float32)
        return 1.0 - np.abs(new - old).mean(axis=2) / 255.0


class SubprocessScorer(Scorer):
    """Client for the scorer subprocess protocol.

    Each request writes one length-prefixed 7-channel CTNS tensor to the
    child's stdin and reads one length-prefixed response: a 1-channel
    CTNS of matching probabilities, or an error frame.
    """

    def __init__(self, argv: list[str] | str):
        if isinstance(argv, str):
            argv = shlex.split(argv)
        if not argv:
            raise ValueError("scorer command must not be empty")
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def _child(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def score(self, example: PairExample) -> np.ndarray:
        child = self._child()
        formats.write_frame(child.stdin, formats.encode_ctns(example.to_tensor()))
        payload = formats.read_frame(child.stdout)
        err = formats.decode_error_frame(payload)
        if err is not None:
            raise RuntimeError(f"scorer error: {err}")
        probs, _ = formats.decode_ctns(payload)
        if probs.shape[:2] != example.mask.data.shape[:2] or probs.shape[2] != 1:
            raise RuntimeError(f"scorer returned wrong shape {probs.shape}")
        return np.clip(probs[:, :, 0], 0.0, 1.0)

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=30)
            self._proc = None


def make_scorer(spec: str) -> Scorer:
    """Build a scorer from a CLI spec: "mock" or "cmd:<argv string>"."""
    if spec == "mock":
        return MockScorer()
    if spec.startswith("cmd:"):
        return SubprocessScorer(spec[4:])
    raise ValueError(f"unknown scorer spec: {spec!r} (expected 'mock' or 'cmd:...')")


def _clamped_window(center_i: float, center_j: float, size: int,
                    width: int, height: int) -> Window:
    if size > width or size > height:
        raise ValueError(f"imagery {width}x{height} too small for a {size} px window")
    i0 = int(round(center_i - size / 2))
    j0 = int(round(center_j - size / 2))
    i0 = min(max(i0, 0), width - size)
    j0 = min(max(j0, 0), height - size)
    return (i0, j0, i0 + size, j0 + size)


def _windows_disjoint(a: Window, b: Window) -> bool:
    return a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]


def sample_training_pair(g: RoadGraph, m_old: RasterImage, m_new: RasterImage,
                         cfg: FilterConfig, rng) -> PairExample:
    """Draw one self-supervised training pair.

    Matching pairs crop both epochs at the same window (80% the mask
    window, 20% a random window reusing the mask pattern); mismatched
    pairs crop the old epoch at a disjoint window at most 2500 m away.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if m_old.data.shape != m_new.data.shape:
        raise ValueError("imagery epochs must have identical dimensions")
    if g.n_vertices == 0 or g.n_edges == 0:
        raise ValueError("cannot sample pairs from an empty graph")
    transform = m_new.transform
    size = cfg.w_mask_size

    last_err: Exception | None = None
    for _ in range(cfg.max_retries):
        v0 = int(rng.integers(0, g.n_vertices))
        if not g.neighbors(v0):
            continue
        t_box = float(rng.uniform(*cfg.t_box_range))
        h = bfs_subgraph(g, v0, t_box, transform)
        vi, vj = g.vertices[v0]
        w_mask = _clamped_window(vi, vj, size, m_new.width, m_new.height)
        mask = mask_from_subgraph(h, w_mask, cfg.mask_buffer_m, transform)
        mask01 = mask.data[:, :, 0]

        if rng.uniform() < 1.0 - cfg.p_matching:
            try:
                w_old = _sample_disjoint_window(
                    rng, w_mask, (vi, vj), size, m_old.width, m_old.height,
                    transform.m_to_px(cfg.mismatch_max_dist_m))
            except ValueError as exc:
                # Some vertices (e.g. near the image center when the
                # window is half the image) admit no disjoint window at
                # all; redraw the vertex rather than give up.
                last_err = exc
                continue
            return PairExample(
                crop_old=_zeroed(m_old, w_old, mask01),
                crop_new=_zeroed(m_new, w_mask, mask01),
                mask=mask, label="mismatched", provenance="disjoint-window",
                window_old=w_old, window_new=w_mask, v0=(vi, vj), t_box_m=t_box)

        if rng.uniform() < cfg.p_random_window:
            i0 = int(rng.integers(0, m_new.width - size + 1))
            j0 = int(rng.integers(0, m_new.height - size + 1))
            w_rand = (i0, j0, i0 + size, j0 + size)
            # The mask pattern follows the crops to the random window so
            # the three rasters stay aligned.
            return PairExample(
                crop_old=_zeroed(m_old, w_rand, mask01),
                crop_new=_zeroed(m_new, w_rand, mask01),
                mask=mask, label="matching", provenance="random-window",
                window_old=w_rand, window_new=w_rand, v0=(vi, vj), t_box_m=t_box)

        return PairExample(
            crop_old=_zeroed(m_old, w_mask, mask01),
            crop_new=_zeroed(m_new, w_mask, mask01),
            mask=mask, label="matching", provenance="same-window",
            window_old=w_mask, window_new=w_mask, v0=(vi, vj), t_box_m=t_box)
    detail = f": {last_err}" if last_err else ""
    raise ValueError(
        f"could not sample a pair after {cfg.max_retries} attempts{detail}")


def _sample_disjoint_window(rng, w_mask: Window, v0: tuple[float, float],
                            size: int, width: int, height: int,
                            max_dist_px: float, tries: int = 1000) -> Window:
    ci, cj = v0
    for _ in range(tries):
        i0 = int(rng.integers(0, width - size + 1))
        j0 = int(rng.integers(0, height - size + 1))
        w = (i0, j0, i0 + size, j0 + size)
        if not _windows_disjoint(w, w_mask):
            continue
        d = math.hypot(i0 + size / 2 - ci, j0 + size / 2 - cj)
        if d <= max_dist_px:
            return w
    raise ValueError("no disjoint window within distance bound; imagery too small")


def proposal_mask(prop: Proposal, window: Window, buffer_m: float,
                  transform: GeoTransform) -> RasterImage:
    if prop.kind == "new-building":
        from .buildings import building_mask
        return building_mask(prop, buffer_m, transform, window=window)
    return mask_from_subgraph(prop, window, buffer_m, transform)


def score_window(prop: Proposal, img: RasterImage, pad_m: float) -> Window:
    pad_px = img.transform.m_to_px(pad_m)
    b = pad_bbox(prop.bbox, pad_px)
    i0 = max(0, int(math.floor(b[0])))
    j0 = max(0, int(math.floor(b[1])))
    i1 = min(img.width, int(math.ceil(b[2])) + 1)
    j1 = min(img.height, int(math.ceil(b[3])) + 1)
    if i1 <= i0 or j1 <= j0:
        raise ValueError(f"proposal bbox {prop.bbox} falls outside imagery")
    return (i0, j0, i1, j1)


def score_proposal(prop: Proposal, m_old: RasterImage, m_new: RasterImage,
                   scorer: Scorer, cfg: FilterConfig) -> float:
    """Mean matching probability over the proposal's mask pixels."""
    transform = m_new.transform
    window = score_window(prop, m_new, cfg.pad_m)
    mask = proposal_mask(prop, window, cfg.mask_buffer_m, transform)
    mask01 = mask.data[:, :, 0]
    if not mask01.any():
        raise ValueError("proposal mask is empty; degenerate geometry")
    example = PairExample(
        crop_old=_zeroed(m_old, window, mask01),
        crop_new=_zeroed(m_new, window, mask01),
        mask=mask, window_old=window, window_new=window)
    probs = np.asarray(scorer.score(example), dtype=np.float64)
    if probs.shape != mask01.shape:
        raise ValueError(f"scorer output shape {probs.shape} != mask shape {mask01.shape}")
    return float(probs[mask01 > 0].mean())


def filter_proposals(props: list[Proposal], m_old: RasterImage | None = None,
                     m_new: RasterImage | None = None, scorer: Scorer | None = None,
                     cfg: FilterConfig | None = None) -> tuple[list[Proposal], list[Proposal]]:
    """Partition proposals into (kept, pruned) by the fooling criterion.

    A LOW matching probability means the pair of crops no longer looks
    like the same place in the same state, i.e. something changed, so
    proposals with score < t_filter are kept.
    """
    cfg = cfg or FilterConfig()
    kept: list[Proposal] = []
    pruned: list[Proposal] = []
    for prop in props:
        if prop.score is None:
            if scorer is None or m_old is None or m_new is None:
                raise ValueError("unscored proposal requires imagery and a scorer")
            prop.score = score_proposal(prop, m_old, m_new, scorer, cfg)
        (kept if prop.score < cfg.t_filter else pruned).append(prop)
    return kept, pruned


def export_dataset(out_dir: str | Path, examples: list[PairExample]) -> dict:
    """Write pair tensors plus a line-delimited index; returns label stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_matching = 0
    n_random = 0
    with open(out / "index.jsonl", "w", encoding="utf-8") as idx:
        for n, ex in enumerate(examples):
            if ex.label is None:
                raise ValueError("dataset export requires labeled examples")
            name = f"pair_{n:06d}.ctns"
            formats.write_ctns(out / name, ex.to_tensor())
            n_matching += ex.label == "matching"
            n_random += ex.provenance == "random-window"
            formats.append_jsonl(idx, {
                "file": name, "label": ex.label, "provenance": ex.provenance,
                "window_old": list(ex.window_old), "window_new": list(ex.window_new),
                "v0": [round(c, 3) for c in ex.v0], "t_box_m": round(ex.t_box_m, 3)})
    count = len(examples)
    stats = {
        "count": count,
        "n_matching": n_matching,
        "matching_fraction": round(n_matching / count, 6) if count else 0.0,
        "random_window_fraction": round(n_random / n_matching, 6) if n_matching else 0.0,
    }
    formats.dump_json(out / "stats.json", stats)
    return stats
