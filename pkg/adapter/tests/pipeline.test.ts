/**
 * End-to-end acceptance: provision synthetic scenes with the pipeline CLI,
 * smoke-train both models from scratch, and drive the filter stage against
 * this package's scorer server. Training really runs here (a few minutes
 * on one core), so every test carries a generous timeout and the file
 * depends on running in declaration order.
 */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { activityProbeSegments, loadScene, readCtnsFile } from "../src/dataset.js";
import { writeSegmentProposals } from "../src/geojson.js";
import { rasterizeSegLabels } from "../src/labels.js";
import { ROAD_HALF_WIDTH_M } from "../src/train_seg.js";

const ROOT = new URL("..", import.meta.url).pathname;
const DIST = (script: string) => path.join(ROOT, "dist", script);

const TRAIN_SEEDS = [101, 102, 103];
const SEG_SEEDS = [301, 302];
const SEG_HELDOUT_SEED = 303;
const EVAL_SEEDS = [201, 202, 203, 204];
const PAIRS_PER_SCENE = 250;
const PLANTED_PER_SCENE = 3;
const PROBES_PER_SCENE = 4;
// Matching pairs score near 1, mismatched near 0, so the keep/prune
// threshold sits at the midpoint.
const T_FILTER = "0.5";
const LONG = 600_000;

let work: string;
let matchModel: string;
let segModel: string;
let pairsIni: string;
let e2eIni: string;

const sceneDir = (seed: number) => path.join(work, "scenes", String(seed));
const pairsDir = (seed: number) => path.join(work, "pairs", String(seed));
const sceneFile = (seed: number, name: string) => path.join(sceneDir(seed), name);

function run(cmd: string, args: string[]): string {
  try {
    return execFileSync(cmd, args, {
      cwd: ROOT, encoding: "utf-8", stdio: ["ignore", "pipe", "pipe"],
    });
  } catch (err) {
    const e = err as { stderr?: string; message: string };
    throw new Error(`${cmd} ${args.join(" ")} failed:\n${e.stderr ?? e.message}`);
  }
}

function readJson(p: string): any {
  return JSON.parse(fs.readFileSync(p, "utf-8"));
}

function featureCount(geojsonPath: string): number {
  return readJson(geojsonPath).features.length;
}

function featureScores(geojsonPath: string): number[] {
  return readJson(geojsonPath).features.map((f: any) => f.properties.score);
}

beforeAll(() => {
  work = fs.mkdtempSync(path.join(os.tmpdir(), "pipeline-"));
  matchModel = path.join(work, "model_match");
  segModel = path.join(work, "model_seg");

  // The pair exporter works at the scorer's native window size; the filter
  // config only needs the same mask buffer so crops look like training.
  pairsIni = path.join(work, "pairs.ini");
  fs.writeFileSync(pairsIni, [
    "[filter]",
    "w_mask_size = 64",
    "mask_buffer_m = 12",
    "p_random_window = 0.5",
    "",
  ].join("\n"));
  e2eIni = path.join(work, "e2e.ini");
  fs.writeFileSync(e2eIni, ["[filter]", "mask_buffer_m = 12", ""].join("\n"));

  // Match-model training scenes: no new roads, plenty of construction
  // activity and distractor roads present in both epochs.
  for (const seed of TRAIN_SEEDS) {
    run("mapdiff", [
      "synth", "--seed", String(seed), "--out", sceneDir(seed), "--size", "768",
      "--n-new", "0", "--n-distractors", "4", "--n-activity", "16",
    ]);
  }
  // Segmentation scenes: just the base road network over clean ground.
  for (const seed of [...SEG_SEEDS, SEG_HELDOUT_SEED]) {
    run("mapdiff", [
      "synth", "--seed", String(seed), "--out", sceneDir(seed), "--size", "768",
      "--n-new", "0", "--n-distractors", "0", "--n-activity", "0",
    ]);
  }
  // Evaluation scenes: planted roads to keep, activity patches to reject.
  for (const seed of EVAL_SEEDS) {
    run("mapdiff", [
      "synth", "--seed", String(seed), "--out", sceneDir(seed),
      "--n-new", String(PLANTED_PER_SCENE), "--n-distractors", "5",
      "--n-activity", String(PROBES_PER_SCENE),
    ]);
  }
  for (const seed of TRAIN_SEEDS) {
    run("mapdiff", [
      "sample-pairs", "--config", pairsIni, "--seed", String(seed),
      "--m-old", sceneFile(seed, "m_old.ctns"),
      "--m-new", sceneFile(seed, "m_new.ctns"),
      "--base-graph", sceneFile(seed, "base_graph.geojson"),
      "--count", String(PAIRS_PER_SCENE), "--out", pairsDir(seed),
    ]);
  }
}, LONG);

afterAll(() => {
  if (work) {
    fs.rmSync(work, { recursive: true, force: true });
  }
});

describe("training data", () => {
  it("exports labeled pair datasets at the scorer's window size", () => {
    for (const seed of TRAIN_SEEDS) {
      const index = fs.readFileSync(
        path.join(pairsDir(seed), "dataset", "index.jsonl"), "utf-8")
        .split("\n").filter((l) => l.trim());
      expect(index).toHaveLength(PAIRS_PER_SCENE);
      const labels = index.map((l) => JSON.parse(l).label);
      expect(labels.filter((l) => l === "matching").length).toBeGreaterThan(50);
      expect(labels.filter((l) => l === "mismatched").length).toBeGreaterThan(50);

      const first = readCtnsFile(
        path.join(pairsDir(seed), "dataset", JSON.parse(index[0]).file));
      expect([first.height, first.width, first.channels]).toEqual([64, 64, 7]);
    }
  });
});

describe("smoke training", () => {
  it("halves both models' held-out losses within the time budget", () => {
    run("node", [
      DIST("train_match.js"),
      "--dataset", TRAIN_SEEDS.map((s) => path.join(pairsDir(s), "dataset")).join(","),
      "--steps", "400", "--batch", "8", "--lr", "0.01", "--seed", "7",
      "--out", matchModel,
    ]);
    run("node", [
      DIST("train_seg.js"), "--scenes", SEG_SEEDS.map(sceneDir).join(","),
      "--steps", "200", "--batch", "2", "--lr", "0.02", "--seed", "7",
      "--out", segModel,
    ]);

    const match = readJson(path.join(matchModel, "train_log.json"));
    const seg = readJson(path.join(segModel, "train_log.json"));
    expect(match.heldout_final).toBeLessThan(0.5 * match.heldout_initial);
    expect(seg.heldout_final).toBeLessThan(0.5 * seg.heldout_initial);
    expect(match.wall_ms + seg.wall_ms).toBeLessThan(LONG);
  }, LONG);

  it("separates held-out matching pairs from mismatched ones across 0.5", () => {
    const match = readJson(path.join(matchModel, "train_log.json"));
    expect(match.n_heldout).toBeGreaterThan(50);
    expect(match.matching_mean_score).toBeGreaterThan(0.5);
    expect(match.mismatched_mean_score).toBeLessThan(0.5);
  });
});

describe("segmentation inference", () => {
  it("writes confidence tensors the pipeline reads, hot on roads and cold off them", () => {
    const scene = sceneDir(SEG_HELDOUT_SEED);
    const out = path.join(work, "seg_pred.ctns");
    run("node", [
      DIST("infer_seg.js"), "--model", segModel,
      "--image", path.join(scene, "m_new.ctns"), "--out", out,
    ]);

    // The pipeline's own reader must accept the file.
    const summary = run("python3", ["-c", `
import sys
from mapdiff import formats

data, scale = formats.read_ctns(sys.argv[1])
assert 0.0 <= data.min() and data.max() <= 1.0, (data.min(), data.max())
print(f"{data.shape} scale={scale}")
`, out]).trim();
    expect(summary).toBe("(192, 192, 64) scale=4");

    const pred = readCtnsFile(out);
    const data = loadScene(scene);
    const labels = rasterizeSegLabels(
      data.graph.segments, 0, 0, data.sizePx, pred.scaleFactor,
      ROAD_HALF_WIDTH_M / data.metersPerPixel);
    let roadSum = 0;
    let roadN = 0;
    let bgSum = 0;
    let bgN = 0;
    for (let n = 0; n < labels.length; n++) {
      if (labels[n] > 0) {
        roadSum += pred.data[n];
        roadN++;
      } else {
        bgSum += pred.data[n];
        bgN++;
      }
    }
    expect(roadN).toBeGreaterThan(1000);
    const roadMean = roadSum / roadN;
    const bgMean = bgSum / bgN;
    expect(roadMean).toBeGreaterThan(0.25);
    expect(bgMean).toBeLessThan(0.05);
  }, LONG);
});

describe("change filtering end to end", () => {
  it("keeps at least 90% of planted roads and prunes at least 80% of activity probes", () => {
    const scorer = `cmd:node ${DIST("serve.js")} --model ${matchModel}`;
    let trueTotal = 0;
    let trueKept = 0;
    let probeTotal = 0;
    let probeKept = 0;
    const keptScores: number[] = [];
    const prunedScores: number[] = [];

    for (const seed of EVAL_SEEDS) {
      const scene = sceneDir(seed);
      const truePath = path.join(scene, "true.geojson");
      run("mapdiff", [
        "trace", "--p-old", path.join(scene, "p_old.ctns"),
        "--p-new", path.join(scene, "p_new.ctns"),
        "--base-graph", path.join(scene, "base_graph.geojson"),
        "--out", truePath,
      ]);
      expect(featureCount(truePath)).toBe(PLANTED_PER_SCENE);

      // False candidates: road-shaped probes through each construction
      // patch, where the ground changed but no road appeared.
      const data = loadScene(scene);
      const probes = activityProbeSegments(data);
      expect(probes).toHaveLength(PROBES_PER_SCENE);
      const probePath = path.join(scene, "injected.geojson");
      writeSegmentProposals(
        probePath, probes, { metersPerPixel: data.metersPerPixel, origin: [0, 0] });

      for (const [proposals, isTrue] of [[truePath, true], [probePath, false]] as const) {
        const kept = proposals.replace(".geojson", ".kept.geojson");
        const pruned = proposals.replace(".geojson", ".pruned.geojson");
        run("mapdiff", [
          "filter", "--config", e2eIni,
          "--m-old", path.join(scene, "m_old.ctns"),
          "--m-new", path.join(scene, "m_new.ctns"),
          "--t-filter", T_FILTER, "--scorer", scorer,
          "--proposals", proposals, "--out", kept, "--pruned", pruned,
        ]);
        const nKept = featureCount(kept);
        const nPruned = featureCount(pruned);
        keptScores.push(...featureScores(kept));
        prunedScores.push(...featureScores(pruned));
        if (isTrue) {
          expect(nKept + nPruned).toBe(PLANTED_PER_SCENE);
          trueTotal += PLANTED_PER_SCENE;
          trueKept += nKept;
        } else {
          expect(nKept + nPruned).toBe(PROBES_PER_SCENE);
          probeTotal += PROBES_PER_SCENE;
          probeKept += nKept;
        }
      }
    }

    const detail = `kept scores ${keptScores.map((s) => s.toFixed(3)).join(" ")}; `
      + `pruned scores ${prunedScores.map((s) => s.toFixed(3)).join(" ")}`;
    expect(trueTotal).toBe(EVAL_SEEDS.length * PLANTED_PER_SCENE);
    expect(probeTotal).toBe(EVAL_SEEDS.length * PROBES_PER_SCENE);
    expect(trueKept, `planted-road retention too low: ${trueKept}/${trueTotal} (${detail})`)
      .toBeGreaterThanOrEqual(Math.ceil(0.9 * trueTotal));
    expect(probeKept, `activity pruning too weak: kept ${probeKept}/${probeTotal} (${detail})`)
      .toBeLessThanOrEqual(Math.floor(0.2 * probeTotal));
  }, LONG);
});
