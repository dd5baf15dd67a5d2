/**
 * The two CNNs behind the pipeline's tensor interfaces.
 *
 * Segmentation: imagery in, per-pixel direction confidences out at a
 * quarter of the input resolution, 64 channels, sigmoid range. Matching:
 * a 7-channel crop pair (3 old + 3 new + 1 mask) in, a same-resolution
 * per-pixel matching probability out, built as 6 encoder layers followed
 * by 5 decoder layers. Exact filter counts are a local choice; anything
 * fully convolutional honoring the I/O contract would do.
 */

import * as tf from "@tensorflow/tfjs";

export const SEG_SCALE = 4;
export const SEG_CHANNELS = 64;
/** Encoder downsamples by 8; inputs are padded to this multiple. */
export const MATCH_MULTIPLE = 8;

const EPS = 1e-7;

export function buildSegModel(seed = 1): tf.LayersModel {
  let n = 0;
  const init = () => tf.initializers.glorotUniform({ seed: seed + n++ });
  const model = tf.sequential({ name: "seg" });
  // Inputs are [0, 1] and all-positive; centering them keeps the first
  // layer out of the regime where relu-style units die. Elu everywhere
  // for the same reason: collapsed units still pass gradient.
  model.add(tf.layers.rescaling({
    scale: 1, offset: -0.5, inputShape: [null, null, 3], name: "center",
  }));
  model.add(tf.layers.conv2d({
    filters: 16, kernelSize: 3, strides: 2,
    padding: "same", activation: "elu", kernelInitializer: init(), name: "enc1",
  }));
  model.add(tf.layers.conv2d({
    filters: 32, kernelSize: 3, strides: 2, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "enc2",
  }));
  model.add(tf.layers.conv2d({
    filters: 32, kernelSize: 3, strides: 1, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "mid",
  }));
  model.add(tf.layers.conv2d({
    filters: SEG_CHANNELS, kernelSize: 1, strides: 1, padding: "same",
    activation: "sigmoid", kernelInitializer: init(), name: "head",
  }));
  return model;
}

export function buildMatchModel(seed = 2): tf.LayersModel {
  let n = 0;
  const init = () => tf.initializers.glorotUniform({ seed: 1000 + seed + n++ });
  const model = tf.sequential({ name: "match" });
  model.add(tf.layers.rescaling({
    scale: 1, offset: -0.5, inputShape: [null, null, 7], name: "center",
  }));
  const enc = [
    { filters: 8, strides: 1 },
    { filters: 12, strides: 2 },
    { filters: 12, strides: 1 },
    { filters: 16, strides: 2 },
    { filters: 16, strides: 1 },
    { filters: 24, strides: 2 },
  ];
  enc.forEach((spec, i) => {
    model.add(tf.layers.conv2d({
      filters: spec.filters, kernelSize: 3, strides: spec.strides,
      padding: "same", activation: "elu", kernelInitializer: init(),
      name: `enc${i + 1}`,
    }));
  });
  model.add(tf.layers.conv2dTranspose({
    filters: 16, kernelSize: 3, strides: 2, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "dec1",
  }));
  model.add(tf.layers.conv2d({
    filters: 12, kernelSize: 3, strides: 1, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "dec2",
  }));
  model.add(tf.layers.conv2dTranspose({
    filters: 12, kernelSize: 3, strides: 2, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "dec3",
  }));
  model.add(tf.layers.conv2d({
    filters: 8, kernelSize: 3, strides: 1, padding: "same",
    activation: "elu", kernelInitializer: init(), name: "dec4",
  }));
  model.add(tf.layers.conv2dTranspose({
    filters: 1, kernelSize: 3, strides: 2, padding: "same",
    activation: "sigmoid", kernelInitializer: init(), name: "dec5",
  }));
  return model;
}

/** Binary cross entropy on probabilities, averaged over every element. */
export function bceMean(yTrue: tf.Tensor, yPred: tf.Tensor): tf.Scalar {
  return tf.tidy(() => {
    const p = tf.clipByValue(yPred, EPS, 1 - EPS);
    const term = tf.add(
      tf.mul(yTrue, tf.log(p)),
      tf.mul(tf.sub(1, yTrue), tf.log(tf.sub(1, p))));
    return tf.neg(tf.mean(term)) as tf.Scalar;
  });
}

/**
 * Binary cross entropy averaged over mask pixels only; pixels where the
 * mask is zero contribute nothing to the loss or its gradient.
 */
export function bceMasked(yTrue: tf.Tensor, yPred: tf.Tensor, mask: tf.Tensor): tf.Scalar {
  return tf.tidy(() => {
    const p = tf.clipByValue(yPred, EPS, 1 - EPS);
    const term = tf.add(
      tf.mul(yTrue, tf.log(p)),
      tf.mul(tf.sub(1, yTrue), tf.log(tf.sub(1, p))));
    const total = tf.sum(tf.mul(tf.neg(term), mask));
    return tf.div(total, tf.maximum(tf.sum(mask), 1)) as tf.Scalar;
  });
}

/**
 * Run the matching model on a (h, w, 7) example of any size: crops are
 * re-zeroed outside the mask (enforcing the exchange contract even on
 * hand-built tensors), the input is zero-padded up to the encoder's
 * stride multiple, and the output is cropped back to (h, w).
 */
export function predictMatch(model: tf.LayersModel, example: tf.Tensor3D): tf.Tensor2D {
  return tf.tidy(() => {
    const [h, w] = example.shape;
    const mask = example.slice([0, 0, 6], [h, w, 1]);
    const zeroed = tf.concat([
      example.slice([0, 0, 0], [h, w, 6]).mul(mask),
      mask,
    ], 2);
    const ph = Math.ceil(h / MATCH_MULTIPLE) * MATCH_MULTIPLE;
    const pw = Math.ceil(w / MATCH_MULTIPLE) * MATCH_MULTIPLE;
    const padded = zeroed.pad([[0, ph - h], [0, pw - w], [0, 0]]);
    const out = model.predict(padded.expandDims(0)) as tf.Tensor4D;
    return out.squeeze([0, 3]).slice([0, 0], [h, w]) as tf.Tensor2D;
  });
}

/** Mean predicted matching probability over the example's mask pixels. */
export function maskedMeanScore(model: tf.LayersModel, example: tf.Tensor3D): number {
  return tf.tidy(() => {
    const [h, w] = example.shape;
    const probs = predictMatch(model, example);
    const mask = example.slice([0, 0, 6], [h, w, 1]).squeeze([2]);
    const total = tf.sum(tf.mul(probs, mask));
    return total.div(tf.sum(mask)).dataSync()[0];
  });
}
