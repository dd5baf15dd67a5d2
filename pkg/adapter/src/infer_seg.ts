/**
 * Segmentation inference: imagery CTNS in, confidence tensor CTNS out
 * (64 channels at a quarter of the input resolution, scale_factor 4).
 */

import * as path from "node:path";
import { parseArgs } from "node:util";

import * as tf from "@tensorflow/tfjs";

import { initBackend } from "./backend.js";
import { Ctns } from "./ctns.js";
import { readCtnsFile, writeCtnsFile } from "./dataset.js";
import { loadModel } from "./io.js";
import { SEG_SCALE, SEG_CHANNELS } from "./models.js";

/** Tiles larger scenes so a full pass stays within modest memory. */
const INFER_TILE_PX = 256;

export function inferSeg(model: tf.LayersModel, img: Ctns): Ctns {
  if (img.channels !== 3) {
    throw new Error(`model expects 3-channel imagery, got ${img.channels} channels`);
  }
  const outH = Math.ceil(img.height / SEG_SCALE);
  const outW = Math.ceil(img.width / SEG_SCALE);
  // Pad the scene up to whole tiles once; tile predictions then land on
  // disjoint output blocks.
  const tilesY = Math.ceil(img.height / INFER_TILE_PX);
  const tilesX = Math.ceil(img.width / INFER_TILE_PX);
  const padH = tilesY * INFER_TILE_PX;
  const padW = tilesX * INFER_TILE_PX;
  const t = INFER_TILE_PX / SEG_SCALE;
  const out = new Float32Array(outH * outW * SEG_CHANNELS);

  const padded = tf.tidy(() => tf.tensor3d(img.data, [img.height, img.width, 3])
    .pad([[0, padH - img.height], [0, padW - img.width], [0, 0]]) as tf.Tensor3D);
  for (let ty = 0; ty < tilesY; ty++) {
    for (let tx = 0; tx < tilesX; tx++) {
      const block = tf.tidy(() => {
        const tile = padded.slice(
          [ty * INFER_TILE_PX, tx * INFER_TILE_PX, 0],
          [INFER_TILE_PX, INFER_TILE_PX, 3]);
        const pred = model.predict(tile.expandDims(0)) as tf.Tensor4D;
        return pred.squeeze([0]) as tf.Tensor3D;
      });
      const vals = block.dataSync() as Float32Array;
      block.dispose();
      for (let v = 0; v < t; v++) {
        const row = ty * t + v;
        if (row >= outH) {
          break;
        }
        const cols = Math.min(t, outW - tx * t);
        if (cols <= 0) {
          continue;
        }
        out.set(
          vals.subarray(v * t * SEG_CHANNELS, (v * t + cols) * SEG_CHANNELS),
          (row * outW + tx * t) * SEG_CHANNELS);
      }
    }
  }
  padded.dispose();
  return {
    height: outH, width: outW, channels: SEG_CHANNELS,
    scaleFactor: SEG_SCALE, data: out,
  };
}

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      model: { type: "string" },
      image: { type: "string" },
      out: { type: "string" },
    },
  });
  if (!values.model || !values.image || !values.out) {
    process.stderr.write("usage: infer_seg --model dir --image in.ctns --out out.ctns\n");
    return 2;
  }
  await initBackend();
  const model = await loadModel(values.model);
  const img = readCtnsFile(values.image);
  const result = inferSeg(model, img);
  writeCtnsFile(values.out, result);
  process.stderr.write(
    `infer_seg: ${img.height}x${img.width} -> `
    + `${result.height}x${result.width}x${result.channels} ${values.out}\n`);
  return 0;
}

if (process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]))) {
  main().then((code) => process.exit(code), (err) => {
    process.stderr.write(`error: ${err?.message ?? err}\n`);
    process.exit(2);
  });
}
