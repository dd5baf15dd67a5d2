/**
 * Matching-model trainer: fit the 7-channel crop-pair classifier on
 * datasets exported by the pipeline's sample-pairs command.
 *
 * Per-pixel binary cross entropy against the pair's scalar label (or a
 * per-pixel label map for augmented pairs), masked so only pixels inside
 * the candidate mask carry loss. Crops are multiplied by the mask before
 * the net, which both enforces the exchange contract and makes the loss
 * exactly invariant to anything painted outside the mask.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";

import * as tf from "@tensorflow/tfjs";

import { augmentPairs } from "./augment.js";
import { initBackend } from "./backend.js";
import { loadPairDataset, PairRecord } from "./dataset.js";
import { saveModel } from "./io.js";
import { buildMatchModel, bceMasked, MATCH_MULTIPLE } from "./models.js";
import { mulberry32, shuffled } from "./rand.js";

export interface MatchTrainOptions {
  steps: number;
  batchSize: number;
  learningRate: number;
  holdoutFraction: number;
  seed: number;
  logEvery?: number;
}

export interface MatchTrainResult {
  losses: number[];
  heldoutInitial: number;
  heldoutFinal: number;
  /** Mean masked score over held-out examples, per class, after training. */
  matchingMeanScore: number;
  mismatchedMeanScore: number;
  nTrain: number;
  nHeldout: number;
  wallMs: number;
}

function packBatch(records: PairRecord[], idx: number[]): tf.Tensor4D {
  const { height: h, width: w } = records[idx[0]];
  const flat = new Float32Array(idx.length * h * w * 7);
  idx.forEach((n, b) => flat.set(records[n].tensor, b * h * w * 7));
  return tf.tensor4d(flat, [idx.length, h, w, 7]);
}

/** Masked per-pixel BCE of the batch against its scalar labels. */
export function matchBatchLoss(
  model: tf.LayersModel, records: PairRecord[], idx: number[],
): tf.Scalar {
  return tf.tidy(() => {
    const xs = packBatch(records, idx);
    const mask = xs.slice([0, 0, 0, 6], [-1, -1, -1, 1]);
    const zeroed = tf.concat([
      xs.slice([0, 0, 0, 0], [-1, -1, -1, 6]).mul(mask),
      mask,
    ], 3);
    const pred = model.apply(zeroed, { training: true }) as tf.Tensor4D;
    const [h, w] = [pred.shape[1], pred.shape[2]];
    const flat = new Float32Array(idx.length * h * w);
    idx.forEach((n, b) => {
      const r = records[n];
      if (r.pixelLabels) {
        flat.set(r.pixelLabels, b * h * w);
      } else {
        flat.fill(r.label, b * h * w, (b + 1) * h * w);
      }
    });
    const labels = tf.tensor4d(flat, [idx.length, h, w, 1]);
    return bceMasked(labels, pred, mask);
  });
}

function evalLoss(model: tf.LayersModel, records: PairRecord[],
                  idx: number[], batchSize: number): number {
  if (!idx.length) {
    return NaN;
  }
  let total = 0;
  for (let at = 0; at < idx.length; at += batchSize) {
    const chunk = idx.slice(at, at + batchSize);
    const loss = matchBatchLoss(model, records, chunk);
    total += loss.dataSync()[0] * chunk.length;
    loss.dispose();
  }
  return total / idx.length;
}

function classMeanScore(model: tf.LayersModel, records: PairRecord[],
                        idx: number[], label: number): number {
  const members = idx.filter((n) => records[n].label === label);
  if (!members.length) {
    return NaN;
  }
  let total = 0;
  for (const n of members) {
    total += tf.tidy(() => {
      const r = records[n];
      const xs = tf.tensor3d(r.tensor, [r.height, r.width, 7]);
      const mask = xs.slice([0, 0, 6], [-1, -1, 1]);
      const zeroed = tf.concat([xs.slice([0, 0, 0], [-1, -1, 6]).mul(mask), mask], 2);
      const pred = model.predict(zeroed.expandDims(0)) as tf.Tensor4D;
      const m = mask.squeeze([2]);
      return tf.sum(pred.squeeze([0, 3]).mul(m)).div(tf.sum(m)).dataSync()[0];
    });
  }
  return total / members.length;
}

export function trainMatch(
  model: tf.LayersModel, records: PairRecord[], opts: MatchTrainOptions,
): MatchTrainResult {
  if (!records.length) {
    throw new Error("empty dataset: no training pairs");
  }
  const { height, width } = records[0];
  for (const r of records) {
    if (r.height !== height || r.width !== width) {
      throw new Error("training pairs must share one window size");
    }
  }
  if (height % MATCH_MULTIPLE || width % MATCH_MULTIPLE) {
    throw new Error(
      `pair windows must be a multiple of ${MATCH_MULTIPLE}, got ${height}x${width}`);
  }
  const t0 = Date.now();
  const rng = mulberry32(opts.seed);
  const order = shuffled(records.map((_, n) => n), rng);
  const nHeldout = records.length >= 10
    ? Math.max(1, Math.round(opts.holdoutFraction * records.length)) : 0;
  const heldout = order.slice(0, nHeldout);
  const train = order.slice(nHeldout);
  if (!train.length) {
    throw new Error("empty dataset: nothing left to train on after holdout");
  }

  const heldoutInitial = evalLoss(model, records, heldout, opts.batchSize);
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
      () => matchBatchLoss(model, records, idx), true) as tf.Scalar;
    losses.push(cost.dataSync()[0]);
    cost.dispose();
    if (opts.logEvery && (step + 1) % opts.logEvery === 0) {
      process.stderr.write(`match step ${step + 1}/${opts.steps} loss ${losses[step].toFixed(4)}\n`);
    }
  }
  optimizer.dispose();

  const heldoutFinal = evalLoss(model, records, heldout, opts.batchSize);
  const scoreSet = heldout.length ? heldout : train;
  return {
    losses,
    heldoutInitial,
    heldoutFinal,
    matchingMeanScore: classMeanScore(model, records, scoreSet, 1),
    mismatchedMeanScore: classMeanScore(model, records, scoreSet, 0),
    nTrain: train.length,
    nHeldout: heldout.length,
    wallMs: Date.now() - t0,
  };
}

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      dataset: { type: "string" },
      steps: { type: "string", default: "300" },
      batch: { type: "string", default: "8" },
      lr: { type: "string", default: "0.01" },
      holdout: { type: "string", default: "0.2" },
      seed: { type: "string", default: "7" },
      out: { type: "string" },
      "log-every": { type: "string", default: "50" },
      "augment-blobs": { type: "string", default: "0.25" },
      "augment-ribbons": { type: "string", default: "0.25" },
    },
  });
  if (!values.dataset || !values.out) {
    process.stderr.write(
      "usage: train_match --dataset dir[,dir...] --out dir "
      + "[--steps N] [--batch N] [--lr F] [--holdout F] [--seed N]\n");
    return 2;
  }
  const backend = await initBackend();
  const records = loadPairDataset(values.dataset.split(","));
  const seed = Number(values.seed);
  const nMatching = records.filter((r) => r.label === 1).length;
  const extra = augmentPairs(
    records,
    Math.round(Number(values["augment-blobs"]) * nMatching),
    Math.round(Number(values["augment-ribbons"]) * nMatching),
    mulberry32(seed ^ 0xa06));
  records.push(...extra);
  const model = buildMatchModel(seed);
  const result = trainMatch(model, records, {
    steps: Number(values.steps),
    batchSize: Number(values.batch),
    learningRate: Number(values.lr),
    holdoutFraction: Number(values.holdout),
    seed,
    logEvery: Number(values["log-every"]) || undefined,
  });
  await saveModel(model, values.out);
  const log = {
    kind: "match",
    backend,
    n_pairs: records.length,
    n_augmented: extra.length,
    n_train: result.nTrain,
    n_heldout: result.nHeldout,
    steps: Number(values.steps),
    batch: Number(values.batch),
    learning_rate: Number(values.lr),
    seed,
    losses: result.losses.map((x) => Number(x.toFixed(6))),
    heldout_initial: result.heldoutInitial,
    heldout_final: result.heldoutFinal,
    matching_mean_score: result.matchingMeanScore,
    mismatched_mean_score: result.mismatchedMeanScore,
    wall_ms: result.wallMs,
  };
  fs.writeFileSync(path.join(values.out, "train_log.json"), JSON.stringify(log, null, 2));
  process.stderr.write(
    `match: ${records.length} pairs, loss ${result.losses[0].toFixed(4)} -> `
    + `${result.losses[result.losses.length - 1].toFixed(4)}, heldout `
    + `${result.heldoutInitial.toFixed(4)} -> ${result.heldoutFinal.toFixed(4)}, `
    + `scores matching ${result.matchingMeanScore.toFixed(3)} `
    + `mismatched ${result.mismatchedMeanScore.toFixed(3)} (${result.wallMs} ms)\n`);
  return 0;
}

if (process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]))) {
  main().then((code) => process.exit(code), (err) => {
    process.stderr.write(`error: ${err?.message ?? err}\n`);
    process.exit(2);
  });
}
