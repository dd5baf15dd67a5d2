/**
 * Minimal GeoJSON I/O for the pipeline's graph and proposal files.
 *
 * Files carry an optional top-level "transform" header (meters_per_pixel
 * plus origin); when present, coordinates on the wire are world meters
 * and everything here converts to pixel coordinates on load.
 */

import * as fs from "node:fs";

export interface Transform {
  metersPerPixel: number;
  origin: [number, number];
}

export const IDENTITY: Transform = { metersPerPixel: 1, origin: [0, 0] };

export function worldToPx(t: Transform, x: number, y: number): [number, number] {
  return [(x - t.origin[0]) / t.metersPerPixel, (y - t.origin[1]) / t.metersPerPixel];
}

export function pxToWorld(t: Transform, i: number, j: number): [number, number] {
  return [t.origin[0] + i * t.metersPerPixel, t.origin[1] + j * t.metersPerPixel];
}

/** A straight edge in pixel coordinates. */
export type Segment = [number, number, number, number];

export interface GraphFile {
  transform: Transform;
  segments: Segment[];
}

function parseTransform(obj: any): Transform {
  const t = obj?.transform;
  if (!t) {
    return IDENTITY;
  }
  return {
    metersPerPixel: Number(t.meters_per_pixel),
    origin: [Number(t.origin[0]), Number(t.origin[1])],
  };
}

/** Load every LineString edge of a graph file as pixel-space segments. */
export function loadGraph(path: string): GraphFile {
  const obj = JSON.parse(fs.readFileSync(path, "utf-8"));
  const transform = parseTransform(obj);
  const segments: Segment[] = [];
  for (const feat of obj.features ?? []) {
    const geom = feat.geometry ?? {};
    if (geom.type !== "LineString") {
      continue;
    }
    const coords: number[][] = geom.coordinates ?? [];
    for (let k = 0; k + 1 < coords.length; k++) {
      const [x0, y0] = worldToPx(transform, coords[k][0], coords[k][1]);
      const [x1, y1] = worldToPx(transform, coords[k + 1][0], coords[k + 1][1]);
      segments.push([x0, y0, x1, y1]);
    }
  }
  return { transform, segments };
}

export interface ProposalFeature {
  kind: string;
  score: number | null;
  /** Polyline pieces in pixel coordinates. */
  lines: Segment[];
}

export function loadProposals(path: string): ProposalFeature[] {
  const obj = JSON.parse(fs.readFileSync(path, "utf-8"));
  const transform = parseTransform(obj);
  const out: ProposalFeature[] = [];
  for (const feat of obj.features ?? []) {
    const geom = feat.geometry ?? {};
    if (geom.type !== "MultiLineString") {
      continue;
    }
    const lines: Segment[] = [];
    for (const line of geom.coordinates ?? []) {
      for (let k = 0; k + 1 < line.length; k++) {
        const [x0, y0] = worldToPx(transform, line[k][0], line[k][1]);
        const [x1, y1] = worldToPx(transform, line[k + 1][0], line[k + 1][1]);
        lines.push([x0, y0, x1, y1]);
      }
    }
    out.push({
      kind: feat.properties?.kind ?? "new-road",
      score: feat.properties?.score ?? null,
      lines,
    });
  }
  return out;
}

/**
 * Write unscored road proposals (one MultiLineString feature per segment)
 * in the pipeline's proposal format, world coordinates plus transform
 * header, so the filter CLI can load and score them.
 */
export function writeSegmentProposals(
  path: string, segments: Segment[], transform: Transform, kind = "new-road",
): void {
  const features = segments.map(([x0, y0, x1, y1]) => {
    const a = pxToWorld(transform, x0, y0);
    const b = pxToWorld(transform, x1, y1);
    return {
      type: "Feature",
      geometry: { type: "MultiLineString", coordinates: [[a, b]] },
      properties: { kind, score: null },
    };
  });
  const obj = {
    type: "FeatureCollection",
    features,
    transform: {
      meters_per_pixel: transform.metersPerPixel,
      origin: [transform.origin[0], transform.origin[1]],
    },
  };
  fs.writeFileSync(path, JSON.stringify(obj) + "\n");
}
