/**
 * Segmentation-model trainer: fit the direction-channel road model on
 * tiles cut from synthetic scenes, labeled from the base graph.
 *
 * Loss is binary cross entropy averaged over all output pixels and all
 * 64 channels. Each tile's epoch (old or new imagery) is drawn at
 * random when the dataset is built.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";

import * as tf from "@tensorflow/tfjs";

import { initBackend } from "./backend.js";
import { loadScene, sampleSegTiles, SegTile } from "./dataset.js";
import { saveModel } from "./io.js";
import { buildSegModel, bceMean, SEG_SCALE, SEG_CHANNELS } from "./models.js";
import { mulberry32, shuffled } from "./rand.js";

/** Painted road ribbons are this wide on either side of the centerline. */
export const ROAD_HALF_WIDTH_M = 4.2;

export interface SegTrainOptions {
  steps: number;
  batchSize: number;
  learningRate: number;
  holdoutFraction: number;
  seed: number;
  logEvery?: number;
}

export interface SegTrainResult {
  losses: number[];
  heldoutInitial: number;
  heldoutFinal: number;
  nTrain: number;
  nHeldout: number;
  wallMs: number;
}

function packTiles(tiles: SegTile[], idx: number[], tilePx: number):
    { xs: tf.Tensor4D; ys: tf.Tensor4D } {
  const t = tilePx / SEG_SCALE;
  const xs = new Float32Array(idx.length * tilePx * tilePx * 3);
  const ys = new Float32Array(idx.length * t * t * SEG_CHANNELS);
  idx.forEach((n, b) => {
    xs.set(tiles[n].image, b * tilePx * tilePx * 3);
    ys.set(tiles[n].label, b * t * t * SEG_CHANNELS);
  });
  return {
    xs: tf.tensor4d(xs, [idx.length, tilePx, tilePx, 3]),
    ys: tf.tensor4d(ys, [idx.length, t, t, SEG_CHANNELS]),
  };
}

function segBatchLoss(model: tf.LayersModel, tiles: SegTile[],
                      idx: number[], tilePx: number): tf.Scalar {
  return tf.tidy(() => {
    const { xs, ys } = packTiles(tiles, idx, tilePx);
    const pred = model.apply(xs, { training: true }) as tf.Tensor4D;
    return bceMean(ys, pred);
  });
}

function evalLoss(model: tf.LayersModel, tiles: SegTile[], idx: number[],
                  tilePx: number, batchSize: number): number {
  if (!idx.length) {
    return NaN;
  }
  let total = 0;
  for (let at = 0; at < idx.length; at += batchSize) {
    const chunk = idx.slice(at, at + batchSize);
    const loss = segBatchLoss(model, tiles, chunk, tilePx);
    total += loss.dataSync()[0] * chunk.length;
    loss.dispose();
  }
  return total / idx.length;
}

export function trainSeg(
  model: tf.LayersModel, tiles: SegTile[], tilePx: number, opts: SegTrainOptions,
): SegTrainResult {
  if (!tiles.length) {
    throw new Error("empty dataset: no training tiles");
  }
  const t0 = Date.now();
  const rng = mulberry32(opts.seed);
  const order = shuffled(tiles.map((_, n) => n), rng);
  const nHeldout = tiles.length >= 5
    ? Math.max(1, Math.round(opts.holdoutFraction * tiles.length)) : 0;
  const heldout = order.slice(0, nHeldout);
  const train = order.slice(nHeldout);
  if (!train.length) {
    throw new Error("empty dataset: nothing left to train on after holdout");
  }

  const heldoutInitial = evalLoss(model, tiles, heldout, tilePx, opts.batchSize);
  const optimizer = tf.train.adam(opts.learningRate);
  const losses: number[] = [];
  let cursor = 0;
  let epoch = shuffled(train, rng);
  for (let step = 0; step < opts.steps; step++) {
    if (cursor + opts.batchSize > epoch.length) {
      epoch = shuffled(train, rng);
      cursor = 0;
    }
    const idx = epoch.slice(cursor, cursor + Math.min(opts.batchSize, epoch.length));
    cursor += idx.length;
    const cost = optimizer.minimize(
      () => segBatchLoss(model, tiles, idx, tilePx), true) as tf.Scalar;
    losses.push(cost.dataSync()[0]);
    cost.dispose();
    if (opts.logEvery && (step + 1) % opts.logEvery === 0) {
      process.stderr.write(`seg step ${step + 1}/${opts.steps} loss ${losses[step].toFixed(4)}\n`);
    }
  }
  optimizer.dispose();

  return {
    losses,
    heldoutInitial,
    heldoutFinal: evalLoss(model, tiles, heldout, tilePx, opts.batchSize),
    nTrain: train.length,
    nHeldout: heldout.length,
    wallMs: Date.now() - t0,
  };
}

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      scenes: { type: "string" },
      "tiles-per-scene": { type: "string", default: "25" },
      tile: { type: "string", default: "256" },
      steps: { type: "string", default: "200" },
      batch: { type: "string", default: "2" },
      lr: { type: "string", default: "0.02" },
      holdout: { type: "string", default: "0.2" },
      seed: { type: "string", default: "7" },
      "half-width-m": { type: "string", default: String(ROAD_HALF_WIDTH_M) },
      out: { type: "string" },
      "log-every": { type: "string", default: "25" },
    },
  });
  if (!values.scenes || !values.out) {
    process.stderr.write(
      "usage: train_seg --scenes dir[,dir...] --out dir "
      + "[--tiles-per-scene N] [--tile N] [--steps N] [--batch N] [--lr F] [--seed N]\n");
    return 2;
  }
  const backend = await initBackend();
  const seed = Number(values.seed);
  const tilePx = Number(values.tile);
  const rng = mulberry32(seed ^ 0x5e9);
  const tiles: SegTile[] = [];
  for (const dir of values.scenes.split(",")) {
    const scene = loadScene(dir);
    const halfWidthPx = Number(values["half-width-m"]) / scene.metersPerPixel;
    tiles.push(...sampleSegTiles(
      scene, Number(values["tiles-per-scene"]), tilePx, SEG_SCALE, halfWidthPx, rng));
  }
  const model = buildSegModel(seed);
  const result = trainSeg(model, tiles, tilePx, {
    steps: Number(values.steps),
    batchSize: Number(values.batch),
    learningRate: Number(values.lr),
    holdoutFraction: Number(values.holdout),
    seed,
    logEvery: Number(values["log-every"]) || undefined,
  });
  await saveModel(model, values.out);
  const log = {
    kind: "seg",
    backend,
    n_tiles: tiles.length,
    n_train: result.nTrain,
    n_heldout: result.nHeldout,
    tile_px: tilePx,
    steps: Number(values.steps),
    batch: Number(values.batch),
    learning_rate: Number(values.lr),
    seed,
    losses: result.losses.map((x) => Number(x.toFixed(6))),
    heldout_initial: result.heldoutInitial,
    heldout_final: result.heldoutFinal,
    wall_ms: result.wallMs,
  };
  fs.writeFileSync(path.join(values.out, "train_log.json"), JSON.stringify(log, null, 2));
  process.stderr.write(
    `seg: ${tiles.length} tiles, loss ${result.losses[0].toFixed(4)} -> `
    + `${result.losses[result.losses.length - 1].toFixed(4)}, heldout `
    + `${result.heldoutInitial.toFixed(4)} -> ${result.heldoutFinal.toFixed(4)} `
    + `(${result.wallMs} ms)\n`);
  return 0;
}

if (process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]))) {
  main().then((code) => process.exit(code), (err) => {
    process.stderr.write(`error: ${err?.message ?? err}\n`);
    process.exit(2);
  });
}
