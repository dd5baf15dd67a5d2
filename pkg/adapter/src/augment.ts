/**
 * Training-pair augmentation for the matching model.
 *
 * Exported pair datasets carry almost no examples of the two difference
 * kinds the filter must tell apart: bright construction-activity patches
 * (which should still count as matching ground) and new dark road ribbons
 * (which should not). Both are painted here directly into cloned pairs,
 * photometrically matched to the imagery these pairs were cropped from:
 * gray value g maps to channels g * [0.96, 1.0, 0.88] / 255, activity
 * adds 45 gray before the tint, a ribbon sets g to 38 + (g - 167) * 0.15.
 */

import { PairRecord } from "./dataset.js";
import { pointSegmentDistance } from "./labels.js";
import { Rng, randInt, shuffled } from "./rand.js";

const TINT = [0.96, 1.0, 0.88];
const ACTIVITY_SHIFT = 45.0 / 255.0;
const RIBBON_GAIN = 0.15;
const RIBBON_BASE = (38.0 - 167.0 * 0.15) / 255.0;
const RIBBON_HALF_WIDTH_PX = 7.0;

function maskedPixels(rec: PairRecord): number[] {
  const on: number[] = [];
  for (let p = 0; p < rec.tensor.length; p += 7) {
    if (rec.tensor[p + 6] > 0) {
      on.push(p / 7);
    }
  }
  return on;
}

/** Brighten a disc of the new crop in place; returns the painted pixel count. */
export function paintBlob(
  rec: PairRecord, centerI: number, centerJ: number, radiusPx: number,
): number {
  const { tensor, width } = rec;
  let painted = 0;
  for (let p = 0; p < tensor.length; p += 7) {
    if (tensor[p + 6] <= 0) {
      continue;
    }
    const j = Math.floor(p / 7 / width);
    const i = (p / 7) % width;
    if ((i - centerI) ** 2 + (j - centerJ) ** 2 > radiusPx * radiusPx) {
      continue;
    }
    for (let c = 0; c < 3; c++) {
      tensor[p + 3 + c] = Math.min(tensor[p + 3 + c] + ACTIVITY_SHIFT * TINT[c], TINT[c]);
    }
    painted++;
  }
  return painted;
}

/**
 * Darken a road-like stripe of the new crop in place and return a per-pixel
 * map that is 0 on the stripe and 1 elsewhere (the matching labels a filter
 * should learn: only the painted structure is a real change).
 */
export function paintRibbon(
  rec: PairRecord, x0: number, y0: number, x1: number, y1: number,
): Float32Array {
  const { tensor, height, width } = rec;
  const labels = new Float32Array(height * width).fill(1);
  for (let p = 0; p < tensor.length; p += 7) {
    if (tensor[p + 6] <= 0) {
      continue;
    }
    const j = Math.floor(p / 7 / width);
    const i = (p / 7) % width;
    if (pointSegmentDistance(i, j, x0, y0, x1, y1) > RIBBON_HALF_WIDTH_PX) {
      continue;
    }
    for (let c = 0; c < 3; c++) {
      tensor[p + 3 + c] = RIBBON_BASE * TINT[c] + RIBBON_GAIN * tensor[p + 3 + c];
    }
    labels[p / 7] = 0;
  }
  return labels;
}

function cloneRecord(rec: PairRecord, provenance: string): PairRecord {
  return { ...rec, tensor: rec.tensor.slice(), provenance };
}

/**
 * Derive extra labeled pairs from the matching ones: nBlobs copies with an
 * activity patch painted in (still matching) and nRibbons copies with a new
 * road ribbon painted in (mismatched at the ribbon pixels only).
 */
export function augmentPairs(
  records: PairRecord[], nBlobs: number, nRibbons: number, rng: Rng,
): PairRecord[] {
  const matching = shuffled(records.filter((r) => r.label === 1), rng);
  if (!matching.length) {
    return [];
  }
  const out: PairRecord[] = [];
  for (let n = 0; n < nBlobs + nRibbons; n++) {
    const src = matching[n % matching.length];
    const on = maskedPixels(src);
    if (!on.length) {
      continue;
    }
    const anchor = on[randInt(rng, on.length)];
    const ai = anchor % src.width;
    const aj = Math.floor(anchor / src.width);
    if (n < nBlobs) {
      const rec = cloneRecord(src, "augmented-activity");
      paintBlob(rec, ai, aj, 8 + randInt(rng, 9));
      out.push(rec);
    } else {
      const rec = cloneRecord(src, "augmented-structure");
      const theta = rng() * 2 * Math.PI;
      const reach = src.width + src.height;
      rec.pixelLabels = paintRibbon(
        rec,
        ai - reach * Math.cos(theta), aj - reach * Math.sin(theta),
        ai + reach * Math.cos(theta), aj + reach * Math.sin(theta));
      rec.label = 0;
      out.push(rec);
    }
  }
  return out;
}
