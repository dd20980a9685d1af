/**
 * Single-file tfjs checkpoints. The stock file:// IO handler needs the
 * node binding, so topology + weights are packed into one JSON document
 * instead; base64 for the weight buffer.
 */

import * as tf from "@tensorflow/tfjs";
import { readFileSync, renameSync, writeFileSync } from "fs";
import { ImageDataset } from "./dataset";

export const CKPT_FORMAT = "cascal-exporter-checkpoint";
export const CKPT_VERSION = 1;

export interface Checkpoint {
  model: tf.LayersModel;
  inputHeight: number;
  inputWidth: number;
  classes: number;
}

function joinWeightData(data: ArrayBuffer | ArrayBuffer[]): ArrayBuffer {
  if (!Array.isArray(data)) return data;
  const total = data.reduce((s, b) => s + b.byteLength, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const b of data) {
    out.set(new Uint8Array(b), off);
    off += b.byteLength;
  }
  return out.buffer;
}

export async function saveCheckpoint(model: tf.LayersModel, path: string): Promise<void> {
  let captured: tf.io.ModelArtifacts | null = null;
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      captured = artifacts;
      return {
        modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: "JSON" },
      };
    }),
  );
  if (captured === null) throw new Error("tfjs save handler was never called");
  const artifacts = captured as tf.io.ModelArtifacts;
  const weightData = joinWeightData(artifacts.weightData as ArrayBuffer | ArrayBuffer[]);
  const inputShape = model.inputs[0].shape; // [null, h, w, 1]
  const outputShape = model.outputs[0].shape;
  const doc = {
    format: CKPT_FORMAT,
    version: CKPT_VERSION,
    inputHeight: inputShape[1],
    inputWidth: inputShape[2],
    classes: outputShape[1],
    modelTopology: artifacts.modelTopology,
    weightSpecs: artifacts.weightSpecs,
    weightDataBase64: Buffer.from(weightData).toString("base64"),
  };
  const tmp = path + ".tmp";
  writeFileSync(tmp, JSON.stringify(doc));
  renameSync(tmp, path);
}

export async function loadCheckpoint(path: string): Promise<Checkpoint> {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch {
    throw new Error(`cannot read checkpoint ${path}`);
  }
  let doc: any;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new Error(`malformed checkpoint ${path}: not valid JSON`);
  }
  if (typeof doc !== "object" || doc === null || doc.format !== CKPT_FORMAT) {
    throw new Error(`malformed checkpoint ${path}: missing format marker`);
  }
  if (doc.version !== CKPT_VERSION) {
    throw new Error(`malformed checkpoint ${path}: unsupported version ${doc.version}`);
  }
  for (const key of ["modelTopology", "weightSpecs", "weightDataBase64"]) {
    if (!(key in doc)) throw new Error(`malformed checkpoint ${path}: missing ${key}`);
  }
  const raw = Buffer.from(doc.weightDataBase64, "base64");
  const weightData = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
  let model: tf.LayersModel;
  try {
    model = await tf.loadLayersModel(
      tf.io.fromMemory({
        modelTopology: doc.modelTopology,
        weightSpecs: doc.weightSpecs,
        weightData,
      }),
    );
  } catch (e) {
    throw new Error(`malformed checkpoint ${path}: ${(e as Error).message}`);
  }
  return {
    model,
    inputHeight: doc.inputHeight,
    inputWidth: doc.inputWidth,
    classes: doc.classes,
  };
}

/** Two dense layers on flattened pixels; the head stays linear so the
 * network outputs logits, which is what the file format stores. */
export function buildClassifier(h: number, w: number, classes: number, seed: number): tf.LayersModel {
  const model = tf.sequential();
  model.add(tf.layers.flatten({ inputShape: [h, w, 1] }));
  model.add(
    tf.layers.dense({
      units: 32,
      activation: "relu",
      kernelInitializer: tf.initializers.heNormal({ seed }),
    }),
  );
  model.add(
    tf.layers.dense({
      units: classes,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 1 }),
    }),
  );
  return model;
}

export interface TrainResult {
  model: tf.LayersModel;
  accuracy: number;
}

/** Full-batch softmax cross-entropy training, enough for the demo task. */
export function trainClassifier(dataset: ImageDataset, steps = 80, seed = 1): TrainResult {
  const { height, width, classes, n } = dataset.spec;
  const model = buildClassifier(height, width, classes, seed);
  const flat = new Float32Array(n * height * width);
  dataset.images.forEach((img, i) => flat.set(img, i * height * width));
  const x = tf.tensor(flat, [n, height, width, 1]);
  const y = tf.oneHot(tf.tensor1d(Int32Array.from(dataset.labels), "int32"), classes);
  const optimizer = tf.train.adam(0.02);
  for (let step = 0; step < steps; step++) {
    optimizer.minimize(() => tf.losses.softmaxCrossEntropy(y, model.apply(x) as tf.Tensor));
  }
  const pred = (model.predict(x) as tf.Tensor).argMax(1);
  const accuracy =
    (pred.dataSync() as Int32Array).reduce(
      (s, p, i) => s + (p === dataset.labels[i] ? 1 : 0),
      0,
    ) / n;
  tf.dispose([x, y, pred]);
  return { model, accuracy };
}

/** Batched forward pass; returns row-major [n, classes] logits. */
export function runInference(ckpt: Checkpoint, images: Float32Array[], batchSize = 64): Float32Array {
  const { model, inputHeight: h, inputWidth: w, classes } = ckpt;
  const n = images.length;
  const out = new Float32Array(n * classes);
  for (let start = 0; start < n; start += batchSize) {
    const stop = Math.min(start + batchSize, n);
    const flat = new Float32Array((stop - start) * h * w);
    for (let i = start; i < stop; i++) flat.set(images[i], (i - start) * h * w);
    const x = tf.tensor(flat, [stop - start, h, w, 1]);
    const logits = model.predict(x) as tf.Tensor;
    out.set(logits.dataSync() as Float32Array, start * classes);
    tf.dispose([x, logits]);
  }
  return out;
}
