/**
 * Procedural image dataset, fully determined by a small JSON spec file.
 *
 * Each class is a stripe pattern at its own orientation, so a tiny dense
 * network can learn the task in seconds and geometric corruptions degrade
 * it in a visible, severity-ordered way.
 */

import { readFileSync } from "fs";
import { mulberry32, normal } from "./rng";

export interface DatasetSpec {
  kind: "oriented-stripes";
  n: number;
  height: number;
  width: number;
  classes: number;
  seed: number;
}

export interface ImageDataset {
  spec: DatasetSpec;
  images: Float32Array[]; // each height*width, values in [0, 1]
  labels: Uint32Array;
}

export function parseDatasetSpec(raw: unknown, source: string): DatasetSpec {
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new Error(`${source}: dataset spec must be a JSON object`);
  }
  const o = raw as Record<string, unknown>;
  if (o.kind !== "oriented-stripes") {
    throw new Error(`${source}: unknown dataset kind ${JSON.stringify(o.kind)}`);
  }
  const ints: Array<[string, number, number]> = [
    ["n", 1, 1_000_000],
    ["height", 4, 512],
    ["width", 4, 512],
    ["classes", 2, 32],
    ["seed", 0, 2 ** 31],
  ];
  const out: Record<string, number> = {};
  for (const [key, lo, hi] of ints) {
    const v = o[key];
    if (typeof v !== "number" || !Number.isInteger(v) || v < lo || v > hi) {
      throw new Error(`${source}: field ${key} must be an integer in [${lo}, ${hi}]`);
    }
    out[key] = v;
  }
  return { kind: "oriented-stripes", ...out } as unknown as DatasetSpec;
}

export function loadDatasetSpec(path: string): DatasetSpec {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch {
    throw new Error(`cannot read dataset spec ${path}`);
  }
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new Error(`dataset spec ${path} is not valid JSON`);
  }
  return parseDatasetSpec(raw, path);
}

export function generateDataset(spec: DatasetSpec): ImageDataset {
  const { n, height, width, classes, seed } = spec;
  const rng = mulberry32(seed);
  const images: Float32Array[] = [];
  const labels = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    const cls = i % classes;
    labels[i] = cls;
    const theta = (Math.PI * cls) / classes;
    const cos = Math.cos(theta);
    const sin = Math.sin(theta);
    const freq = 2 + rng() * 0.3;
    const phase = rng() * 2 * Math.PI;
    const img = new Float32Array(height * width);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const u = (x * cos + y * sin) / Math.max(height, width);
        let v = 0.5 + 0.5 * Math.sin(2 * Math.PI * freq * u + phase);
        v += 0.03 * normal(rng);
        img[y * width + x] = Math.min(1, Math.max(0, v));
      }
    }
    images.push(img);
  }
  return { spec, images, labels };
}
