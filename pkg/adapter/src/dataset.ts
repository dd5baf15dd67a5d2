/**
 * Dataset access: pair exports from the pipeline's sample-pairs command
 * and synthetic scene directories (CTNS imagery plus the base graph).
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Ctns, decodeCtns, encodeCtns } from "./ctns.js";
import { GraphFile, loadGraph, Segment } from "./geojson.js";
import { rasterizeSegLabels } from "./labels.js";
import { Rng, randInt } from "./rand.js";

export function readCtnsFile(p: string): Ctns {
  return decodeCtns(fs.readFileSync(p));
}

export function writeCtnsFile(p: string, t: Ctns): void {
  fs.writeFileSync(p, encodeCtns(t));
}

export interface PairRecord {
  /** (h, w, 7) row-major values: 3 old, 3 new, 1 mask. */
  tensor: Float32Array;
  height: number;
  width: number;
  /** 1 for matching, 0 for mismatched. */
  label: number;
  /** Optional (h * w) per-pixel labels overriding the scalar one. */
  pixelLabels?: Float32Array;
  provenance: string;
  file: string;
}

/** Load one or more sample-pairs export directories (index.jsonl). */
export function loadPairDataset(dirs: string[]): PairRecord[] {
  const out: PairRecord[] = [];
  for (const dir of dirs) {
    const index = fs.readFileSync(path.join(dir, "index.jsonl"), "utf-8");
    for (const line of index.split("\n")) {
      if (!line.trim()) {
        continue;
      }
      const rec = JSON.parse(line);
      const t = readCtnsFile(path.join(dir, rec.file));
      if (t.channels !== 7) {
        throw new Error(`pair tensor ${rec.file} has ${t.channels} channels, expected 7`);
      }
      if (rec.label !== "matching" && rec.label !== "mismatched") {
        throw new Error(`pair ${rec.file} has unknown label ${JSON.stringify(rec.label)}`);
      }
      out.push({
        tensor: t.data,
        height: t.height,
        width: t.width,
        label: rec.label === "matching" ? 1 : 0,
        provenance: rec.provenance,
        file: rec.file,
      });
    }
  }
  return out;
}

export interface SceneData {
  dir: string;
  sizePx: number;
  metersPerPixel: number;
  /** (size, size, 3) imagery in [0, 1], one per epoch. */
  imagery: { old: Ctns; new: Ctns };
  graph: GraphFile;
  /** Activity patches as (center i, center j, radius) in pixels. */
  activity: [number, number, number][];
}

export function loadScene(dir: string): SceneData {
  const manifest = JSON.parse(
    fs.readFileSync(path.join(dir, "manifest.json"), "utf-8"));
  const imgOld = readCtnsFile(path.join(dir, "m_old.ctns"));
  const imgNew = readCtnsFile(path.join(dir, "m_new.ctns"));
  if (imgOld.channels !== 3 || imgNew.channels !== 3) {
    throw new Error(`scene imagery must be 3-channel, got ${imgOld.channels}/${imgNew.channels}`);
  }
  return {
    dir,
    sizePx: manifest.params.size_px,
    metersPerPixel: manifest.params.meters_per_pixel,
    imagery: { old: imgOld, new: imgNew },
    graph: loadGraph(path.join(dir, "base_graph.geojson")),
    activity: (manifest.activity ?? []).map((a: number[]) => [a[0], a[1], a[2]]),
  };
}

export interface SegTile {
  /** (tilePx, tilePx, 3) imagery values in [0, 1]. */
  image: Float32Array;
  /** (tilePx/scale, tilePx/scale, 64) direction labels. */
  label: Float32Array;
}

function cropImage(img: Ctns, i0: number, j0: number, tilePx: number): Float32Array {
  const out = new Float32Array(tilePx * tilePx * 3);
  for (let v = 0; v < tilePx; v++) {
    const src = ((j0 + v) * img.width + i0) * 3;
    out.set(img.data.subarray(src, src + tilePx * 3), v * tilePx * 3);
  }
  return out;
}

/**
 * Cut random training tiles from a scene, drawing each tile's epoch at
 * random; labels come from the base graph regardless of epoch, the same
 * convention the full-scale trainer would use with a trusted basemap.
 */
export function sampleSegTiles(
  scene: SceneData, count: number, tilePx: number, scale: number,
  halfWidthPx: number, rng: Rng,
): SegTile[] {
  if (tilePx > scene.sizePx) {
    throw new Error(`tile ${tilePx} exceeds scene size ${scene.sizePx}`);
  }
  const tiles: SegTile[] = [];
  const span = scene.sizePx - tilePx + 1;
  for (let n = 0; n < count; n++) {
    const i0 = randInt(rng, span);
    const j0 = randInt(rng, span);
    const img = rng() < 0.5 ? scene.imagery.old : scene.imagery.new;
    tiles.push({
      image: cropImage(img, i0, j0, tilePx),
      label: rasterizeSegLabels(scene.graph.segments, i0, j0, tilePx, scale, halfWidthPx),
    });
  }
  return tiles;
}

/** Horizontal probe segments through each activity patch center. */
export function activityProbeSegments(scene: SceneData, halfLenPx = 18): Segment[] {
  return scene.activity.map(([ci, cj]) => [ci - halfLenPx, cj, ci + halfLenPx, cj]);
}
