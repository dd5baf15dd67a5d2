/** tfjs backend bootstrap: WASM with SIMD, falling back to plain cpu. */

import { createRequire } from "node:module";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";
import { setWasmPaths } from "@tensorflow/tfjs-backend-wasm";

import { registerWasmTrainingKernels } from "./wasm_patch.js";

let initialized = false;

export async function initBackend(): Promise<string> {
  if (initialized) {
    return tf.getBackend();
  }
  tf.enableProdMode();
  const require = createRequire(import.meta.url);
  const dist = path.dirname(require.resolve("@tensorflow/tfjs-backend-wasm"));
  setWasmPaths(dist + path.sep);
  registerWasmTrainingKernels();
  try {
    await tf.setBackend("wasm");
  } catch {
    await tf.setBackend("cpu");
  }
  await tf.ready();
  initialized = true;
  return tf.getBackend();
}
