/**
 * The prebuilt wasm backend ships forward conv kernels and the
 * input-gradient kernel but not Conv2DBackpropFilter, so any attempt to
 * train a conv layer dies with a missing-kernel error. This registers a
 * plain JS implementation for that one hole. Inputs and output live on
 * the wasm heap; the accumulation loop is ordered so the innermost walk
 * is contiguous in both the filter gradient and dy.
 */

import * as tf from "@tensorflow/tfjs";

interface HeapBackend {
  makeOutput(shape: number[], dtype: string): tf.TensorInfo;
  typedArrayFromHeap(t: tf.TensorInfo): Float32Array;
}

function conv2dBackpropFilter(args: {
  inputs: Record<string, tf.TensorInfo>;
  attrs: Record<string, unknown> | undefined;
  backend: unknown;
}): tf.TensorInfo {
  const { x, dy } = args.inputs;
  const attrs = args.attrs as {
    strides: number | [number, number];
    pad: "valid" | "same" | number;
    dataFormat: "NHWC" | "NCHW";
    dimRoundingMode?: "floor" | "round" | "ceil";
    filterShape: [number, number, number, number];
  };
  if (attrs.dataFormat !== "NHWC") {
    throw new Error(`conv2d filter gradient: unsupported data format ${attrs.dataFormat}`);
  }
  const info = tf.backend_util.computeConv2DInfo(
    x.shape as [number, number, number, number], attrs.filterShape,
    attrs.strides, 1 /* dilations */, attrs.pad, attrs.dimRoundingMode);
  const {
    batchSize, inHeight, inWidth, inChannels, outHeight, outWidth, outChannels,
    filterHeight, filterWidth, strideHeight, strideWidth,
  } = info;
  const padTop = info.padInfo.top;
  const padLeft = info.padInfo.left;

  const backend = args.backend as HeapBackend;
  // Allocate first: growing the wasm heap detaches earlier views.
  const out = backend.makeOutput([filterHeight, filterWidth, inChannels, outChannels], "float32");
  const dw = backend.typedArrayFromHeap(out);
  const xVals = backend.typedArrayFromHeap(x);
  const dyVals = backend.typedArrayFromHeap(dy);
  dw.fill(0);

  for (let b = 0; b < batchSize; b++) {
    for (let oy = 0; oy < outHeight; oy++) {
      for (let kh = 0; kh < filterHeight; kh++) {
        const iy = oy * strideHeight + kh - padTop;
        if (iy < 0 || iy >= inHeight) {
          continue;
        }
        for (let ox = 0; ox < outWidth; ox++) {
          const dyOff = ((b * outHeight + oy) * outWidth + ox) * outChannels;
          for (let kw = 0; kw < filterWidth; kw++) {
            const ix = ox * strideWidth + kw - padLeft;
            if (ix < 0 || ix >= inWidth) {
              continue;
            }
            const xOff = ((b * inHeight + iy) * inWidth + ix) * inChannels;
            const wOff = ((kh * filterWidth + kw) * inChannels) * outChannels;
            for (let ci = 0; ci < inChannels; ci++) {
              const xv = xVals[xOff + ci];
              if (xv === 0) {
                continue;
              }
              const o = wOff + ci * outChannels;
              for (let co = 0; co < outChannels; co++) {
                dw[o + co] += xv * dyVals[dyOff + co];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/** Idempotent; call once before training on the wasm backend. */
export function registerWasmTrainingKernels(): void {
  if (tf.getKernel("Conv2DBackpropFilter", "wasm")) {
    return;
  }
  tf.registerKernel({
    kernelName: "Conv2DBackpropFilter",
    backendName: "wasm",
    kernelFunc: conv2dBackpropFilter as unknown as tf.KernelFunc,
  });
}
