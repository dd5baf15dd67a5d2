/**
 * Filesystem model persistence for tfjs in plain Node: an IOHandler pair
 * writing model.json (topology + weight manifest) next to weights.bin.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";

function joinWeightData(data: tf.io.WeightData | undefined): ArrayBuffer {
  if (data === undefined) {
    return new ArrayBuffer(0);
  }
  if (data instanceof ArrayBuffer) {
    return data;
  }
  const parts = Array.isArray(data) ? data : [data];
  const total = parts.reduce((n, p) => n + p.byteLength, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(new Uint8Array(p as ArrayBuffer), off);
    off += p.byteLength;
  }
  return out.buffer;
}

export function fileSaveHandler(dir: string): tf.io.IOHandler {
  return {
    save: async (artifacts: tf.io.ModelArtifacts) => {
      fs.mkdirSync(dir, { recursive: true });
      const weights = joinWeightData(artifacts.weightData);
      const manifest = {
        modelTopology: artifacts.modelTopology,
        weightSpecs: artifacts.weightSpecs,
        format: artifacts.format ?? "layers-model",
      };
      fs.writeFileSync(path.join(dir, "model.json"), JSON.stringify(manifest));
      fs.writeFileSync(path.join(dir, "weights.bin"), Buffer.from(weights));
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: "JSON" as const,
        },
      };
    },
  };
}

export function fileLoadHandler(dir: string): tf.io.IOHandler {
  return {
    load: async () => {
      const manifest = JSON.parse(
        fs.readFileSync(path.join(dir, "model.json"), "utf-8"));
      const bytes = fs.readFileSync(path.join(dir, "weights.bin"));
      const weightData = new Uint8Array(bytes).buffer;
      return {
        modelTopology: manifest.modelTopology,
        weightSpecs: manifest.weightSpecs,
        weightData,
        format: manifest.format,
      } as tf.io.ModelArtifacts;
    },
  };
}

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  await model.save(fileSaveHandler(dir));
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  return tf.loadLayersModel(fileLoadHandler(dir));
}
