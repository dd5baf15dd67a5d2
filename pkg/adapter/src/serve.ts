/**
 * Scorer subprocess: answers framed 7-channel pair tensors on stdin with
 * per-pixel matching probability maps on stdout, in request order.
 *
 * Requests that cannot be scored (bad header, wrong channel count, empty
 * mask) get an error frame and the stream continues; stream-level
 * corruption (truncated or implausibly large frames) gets a final error
 * frame and a clean exit so the client sees a response, not a hang.
 */

import * as path from "node:path";
import { parseArgs } from "node:util";

import * as tf from "@tensorflow/tfjs";

import { initBackend } from "./backend.js";
import { Ctns, decodeCtns, encodeCtns, encodeErrorFrame } from "./ctns.js";
import { encodeFrame, FrameReader } from "./framing.js";
import { loadModel } from "./io.js";
import { predictMatch } from "./models.js";

/** Score one request payload, returning the response payload (data or error). */
export function scoreRequest(model: tf.LayersModel, payload: Buffer): Buffer {
  let request: Ctns;
  try {
    request = decodeCtns(payload);
  } catch (err) {
    return encodeErrorFrame(`bad request: ${err instanceof Error ? err.message : err}`);
  }
  const { height, width, channels, data } = request;
  if (channels !== 7) {
    return encodeErrorFrame(
      `expected a 7-channel pair tensor, got shape (${height}, ${width}, ${channels})`);
  }
  let anyMask = false;
  for (let p = 6; p < data.length; p += 7) {
    if (data[p] > 0) {
      anyMask = true;
      break;
    }
  }
  if (!anyMask) {
    return encodeErrorFrame("mask is empty");
  }
  const probs = tf.tidy(() => {
    const example = tf.tensor3d(data, [height, width, 7]);
    return predictMatch(model, example).dataSync() as Float32Array;
  });
  return encodeCtns({ height, width, channels: 1, scaleFactor: 1, data: probs });
}

/** Write one frame and resolve once it reaches the pipe. */
function writeFrameFlushed(stream: NodeJS.WritableStream, payload: Buffer): Promise<void> {
  return new Promise((resolve, reject) => {
    stream.write(encodeFrame(payload), (err) => (err ? reject(err) : resolve()));
  });
}

/** Answer frames until end of input. Returns the process exit code. */
export async function serve(
  model: tf.LayersModel,
  stdin: NodeJS.ReadableStream,
  stdout: NodeJS.WritableStream,
): Promise<number> {
  const reader = new FrameReader();
  for await (const chunk of stdin) {
    reader.push(chunk as Buffer);
    for (let ev = reader.next(); ev !== null; ev = reader.next()) {
      if (ev.kind === "oversize") {
        await writeFrameFlushed(
          stdout, encodeErrorFrame(`frame length ${ev.length} implausibly large`));
        return 0;
      }
      await writeFrameFlushed(stdout, scoreRequest(model, ev.payload));
    }
  }
  if (reader.pending() > 0) {
    const message = reader.pending() < 8 ? "truncated frame header" : "truncated frame payload";
    await writeFrameFlushed(stdout, encodeErrorFrame(message));
  }
  return 0;
}

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      model: { type: "string" },
    },
  });
  if (!values.model) {
    throw new Error("--model <dir> is required");
  }
  const backend = await initBackend();
  const model = await loadModel(values.model);
  process.stderr.write(`scorer ready: backend=${backend}\n`);
  return serve(model, process.stdin, process.stdout);
}

if (process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]))) {
  main().then((code) => process.exit(code), (err) => {
    process.stderr.write(`error: ${err?.message ?? err}\n`);
    process.exit(2);
  });
}
