/**
 * Direction-channel label rasterization for segmentation training.
 *
 * The confidence grid has 64 direction channels; channel k spans angles
 * [k, k+1) * 2*pi/64 and a grid cell (r, c) at scale s sits on full-
 * resolution pixel (c*s, r*s). A pixel on a road at angle alpha is
 * labeled 1 in channel_of_angle(alpha) and in the opposite channel, so
 * the target is symmetric under direction reversal like the tracer's
 * tensors.
 */

import type { Segment } from "./geojson.js";

export const N_CHANNELS = 64;
export const CHANNEL_WIDTH = (2 * Math.PI) / N_CHANNELS;

export function channelOfAngle(alpha: number): number {
  if (!Number.isFinite(alpha)) {
    throw new Error(`angle must be finite, got ${alpha}`);
  }
  // The tracer computes this with fmod-based modulo and floor division;
  // anything else disagrees at sector boundaries, where the naive
  // floor(a / width) quotient can round across the edge.
  let a = alpha % (2 * Math.PI);
  if (a < 0) {
    a += 2 * Math.PI;
  }
  if (a >= 2 * Math.PI) { // fp wrap for tiny negative inputs
    a = 0;
  }
  const rem = a % CHANNEL_WIDTH;
  const div = (a - rem) / CHANNEL_WIDTH;
  let k = Math.floor(div);
  if (div - k > 0.5) {
    k += 1;
  }
  return Math.min(k, N_CHANNELS - 1);
}

export function oppositeChannel(k: number): number {
  return (k + N_CHANNELS / 2) % N_CHANNELS;
}

export function pointSegmentDistance(
  px: number, py: number, x0: number, y0: number, x1: number, y1: number,
): number {
  const dx = x1 - x0;
  const dy = y1 - y0;
  const len2 = dx * dx + dy * dy;
  let t = 0;
  if (len2 > 0) {
    t = Math.max(0, Math.min(1, ((px - x0) * dx + (py - y0) * dy) / len2));
  }
  return Math.hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

/**
 * Rasterize road segments into a (t, t, 64) float label grid for the
 * tile whose top-left full-resolution pixel is (i0, j0).
 *
 * tilePx must be a multiple of scale; cells within halfWidthPx of a
 * segment get 1.0 at the segment's channel and its opposite.
 */
export function rasterizeSegLabels(
  segments: Segment[], i0: number, j0: number,
  tilePx: number, scale: number, halfWidthPx: number,
): Float32Array {
  if (tilePx % scale !== 0) {
    throw new Error(`tile size ${tilePx} not a multiple of scale ${scale}`);
  }
  const t = tilePx / scale;
  const out = new Float32Array(t * t * N_CHANNELS);
  for (const [x0, y0, x1, y1] of segments) {
    const phi = Math.atan2(y1 - y0, x1 - x0);
    const kf = channelOfAngle(phi);
    const kb = oppositeChannel(kf);
    // Cell anchors are every scale-th pixel; walk only the segment's
    // padded bounding box.
    const reach = halfWidthPx + scale;
    const uLo = Math.max(0, Math.floor((Math.min(x0, x1) - reach - i0) / scale));
    const uHi = Math.min(t - 1, Math.ceil((Math.max(x0, x1) + reach - i0) / scale));
    const vLo = Math.max(0, Math.floor((Math.min(y0, y1) - reach - j0) / scale));
    const vHi = Math.min(t - 1, Math.ceil((Math.max(y0, y1) + reach - j0) / scale));
    for (let v = vLo; v <= vHi; v++) {
      const py = j0 + v * scale;
      for (let u = uLo; u <= uHi; u++) {
        const px = i0 + u * scale;
        if (pointSegmentDistance(px, py, x0, y0, x1, y1) <= halfWidthPx) {
          const base = (v * t + u) * N_CHANNELS;
          out[base + kf] = 1.0;
          out[base + kb] = 1.0;
        }
      }
    }
  }
  return out;
}

/** Per-cell road presence: true where any direction channel is set. */
export function roadCellMask(labels: Float32Array, cells: number): Uint8Array {
  const mask = new Uint8Array(cells);
  for (let n = 0; n < cells; n++) {
    const base = n * N_CHANNELS;
    for (let k = 0; k < N_CHANNELS; k++) {
      if (labels[base + k] > 0) {
        mask[n] = 1;
        break;
      }
    }
  }
  return mask;
}
