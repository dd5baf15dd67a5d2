import { execFileSync } from "node:child_process";

import { describe, expect, it } from "vitest";

import {
  CHANNEL_WIDTH, N_CHANNELS, channelOfAngle, oppositeChannel,
  pointSegmentDistance, rasterizeSegLabels, roadCellMask,
} from "../src/labels.js";

describe("channelOfAngle", () => {
  it("bins angles into 64 equal sectors", () => {
    expect(channelOfAngle(0)).toBe(0);
    expect(channelOfAngle(CHANNEL_WIDTH * 0.999)).toBe(0);
    expect(channelOfAngle(CHANNEL_WIDTH)).toBe(1);
    expect(channelOfAngle(Math.PI)).toBe(32);
    expect(channelOfAngle(-1e-9)).toBe(63);
    expect(channelOfAngle(2 * Math.PI + CHANNEL_WIDTH / 2)).toBe(0);
  });

  it("never returns 64 at the wrap point", () => {
    expect(channelOfAngle(2 * Math.PI)).toBe(0);
    expect(channelOfAngle(2 * Math.PI - 1e-15)).toBe(63);
    expect(() => channelOfAngle(Number.NaN)).toThrow(/finite/);
  });

  it("agrees with the tracer's channel convention", () => {
    const angles: number[] = [];
    for (let n = 0; n < 200; n++) {
      angles.push((n * 7919) % 1000 / 1000 * 2 * Math.PI - Math.PI);
    }
    // Sector boundaries and near-boundary neighbors, where rounding
    // differences would show up first.
    for (let k = 0; k <= N_CHANNELS; k++) {
      const edge = k * CHANNEL_WIDTH;
      angles.push(edge, edge - 1e-15, edge + 1e-15, -edge, edge - 2 * Math.PI);
    }
    const theirs = execFileSync(
      "python3",
      ["-c", `
import json, sys
from mapdiff.core import channel_of_angle

sys.stdout.write(json.dumps([channel_of_angle(a) for a in json.load(sys.stdin)]))
`],
      { encoding: "utf-8", input: JSON.stringify(angles) });
    expect(angles.map(channelOfAngle)).toEqual(JSON.parse(theirs));
  });

  it("pairs each channel with its reversal", () => {
    expect(oppositeChannel(0)).toBe(32);
    expect(oppositeChannel(40)).toBe(8);
    for (let k = 0; k < N_CHANNELS; k++) {
      expect(oppositeChannel(oppositeChannel(k))).toBe(k);
    }
  });
});

describe("pointSegmentDistance", () => {
  it("measures perpendicular distance inside the segment and endpoint distance outside", () => {
    expect(pointSegmentDistance(5, 3, 0, 0, 10, 0)).toBeCloseTo(3, 12);
    expect(pointSegmentDistance(-4, 3, 0, 0, 10, 0)).toBeCloseTo(5, 12);
    expect(pointSegmentDistance(2, 2, 1, 1, 1, 1)).toBeCloseTo(Math.SQRT2, 12);
  });
});

describe("rasterizeSegLabels", () => {
  it("labels a horizontal road in channel 0 and its reverse channel 32", () => {
    const labels = rasterizeSegLabels([[0, 32, 63, 32]], 0, 0, 64, 4, 3);
    const t = 16;
    // Row of cells whose anchor pixels sit on the segment.
    const v = 8;
    for (let u = 0; u < t; u++) {
      const base = (v * t + u) * N_CHANNELS;
      expect(labels[base + 0]).toBe(1);
      expect(labels[base + 32]).toBe(1);
      let others = 0;
      for (let k = 0; k < N_CHANNELS; k++) {
        if (k !== 0 && k !== 32) {
          others += labels[base + k];
        }
      }
      expect(others).toBe(0);
    }
    // Far row stays clear.
    const farBase = (1 * t + 8) * N_CHANNELS;
    for (let k = 0; k < N_CHANNELS; k++) {
      expect(labels[farBase + k]).toBe(0);
    }
  });

  it("labels a diagonal road in the 45-degree channel pair", () => {
    const labels = rasterizeSegLabels([[0, 0, 60, 60]], 0, 0, 64, 4, 3);
    const k = channelOfAngle(Math.PI / 4);
    expect(k).toBe(8);
    const t = 16;
    const base = (5 * t + 5) * N_CHANNELS;
    expect(labels[base + 8]).toBe(1);
    expect(labels[base + 40]).toBe(1);
  });

  it("respects the tile offset", () => {
    const whole = rasterizeSegLabels([[100, 130, 163, 130]], 0, 0, 256, 4, 3);
    const shifted = rasterizeSegLabels([[100, 130, 163, 130]], 64, 64, 128, 4, 3);
    const t = 32;
    for (let v = 0; v < t; v++) {
      for (let u = 0; u < t; u++) {
        const a = ((v + 16) * 64 + (u + 16)) * N_CHANNELS;
        const b = (v * t + u) * N_CHANNELS;
        for (let k = 0; k < N_CHANNELS; k++) {
          expect(shifted[b + k]).toBe(whole[a + k]);
        }
      }
    }
  });

  it("returns zeros for an empty graph and rejects misaligned tiles", () => {
    const labels = rasterizeSegLabels([], 0, 0, 16, 4, 3);
    expect(labels.every((x) => x === 0)).toBe(true);
    expect(() => rasterizeSegLabels([], 0, 0, 10, 4, 3)).toThrow(/not a multiple/);
  });

  it("drives roadCellMask", () => {
    const labels = rasterizeSegLabels([[0, 8, 15, 8]], 0, 0, 16, 4, 1);
    const mask = roadCellMask(labels, 16);
    // Cells in the segment's row are road, the rest are not.
    expect(Array.from(mask.subarray(8, 12))).toEqual([1, 1, 1, 1]);
    expect(Array.from(mask.subarray(0, 4))).toEqual([0, 0, 0, 0]);
  });
});
