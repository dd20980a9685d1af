/**
 * Image corruptions at severities 0..5. Severity 0 is the identity for
 * every kind; parameters grow monotonically with severity.
 */

import { Rng, normal } from "./rng";

export const TRANSFORM_KINDS = ["noise", "blur", "rotation", "contrast", "translation"] as const;
export type TransformKind = (typeof TRANSFORM_KINDS)[number];

const NOISE_SIGMA = [0.04, 0.08, 0.12, 0.18, 0.26];
const BLUR_RADIUS = [1, 1, 2, 2, 3];
const BLUR_PASSES = [1, 2, 1, 2, 3];
const ROTATION_DEG = [4, 8, 14, 22, 32];
const CONTRAST_FACTOR = [0.85, 0.7, 0.55, 0.4, 0.3];
const TRANSLATION_PX = [1, 2, 3, 4, 6];

export function isTransformKind(name: string): name is TransformKind {
  return (TRANSFORM_KINDS as readonly string[]).includes(name);
}

function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}

function addNoise(img: Float32Array, sigma: number, rng: Rng): Float32Array {
  const out = new Float32Array(img.length);
  for (let i = 0; i < img.length; i++) out[i] = clamp01(img[i] + sigma * normal(rng));
  return out;
}

function boxBlur(img: Float32Array, h: number, w: number, radius: number): Float32Array {
  const out = new Float32Array(img.length);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let sum = 0;
      let count = 0;
      for (let dy = -radius; dy <= radius; dy++) {
        const yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (let dx = -radius; dx <= radius; dx++) {
          const xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          sum += img[yy * w + xx];
          count++;
        }
      }
      out[y * w + x] = sum / count;
    }
  }
  return out;
}

function bilinear(img: Float32Array, h: number, w: number, x: number, y: number): number {
  if (x < 0 || y < 0 || x > w - 1 || y > h - 1) return 0;
  const x0 = Math.min(Math.floor(x), w - 2);
  const y0 = Math.min(Math.floor(y), h - 2);
  const fx = x - x0;
  const fy = y - y0;
  const v00 = img[y0 * w + x0];
  const v10 = img[y0 * w + x0 + 1];
  const v01 = img[(y0 + 1) * w + x0];
  const v11 = img[(y0 + 1) * w + x0 + 1];
  return v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) + v01 * (1 - fx) * fy + v11 * fx * fy;
}

function rotate(img: Float32Array, h: number, w: number, degrees: number): Float32Array {
  const rad = (degrees * Math.PI) / 180;
  const cos = Math.cos(rad);
  const sin = Math.sin(rad);
  const cx = (w - 1) / 2;
  const cy = (h - 1) / 2;
  const out = new Float32Array(img.length);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const dx = x - cx;
      const dy = y - cy;
      out[y * w + x] = bilinear(img, h, w, cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy);
    }
  }
  return out;
}

function reduceContrast(img: Float32Array, factor: number): Float32Array {
  const out = new Float32Array(img.length);
  for (let i = 0; i < img.length; i++) out[i] = clamp01(0.5 + (img[i] - 0.5) * factor);
  return out;
}

function translate(img: Float32Array, h: number, w: number, sx: number, sy: number): Float32Array {
  const out = new Float32Array(img.length); // zero fill outside
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const xx = x - sx;
      const yy = y - sy;
      if (xx >= 0 && xx < w && yy >= 0 && yy < h) out[y * w + x] = img[yy * w + xx];
    }
  }
  return out;
}

/**
 * Apply one corruption to one image. The rng is consumed even by kinds with
 * no random component so per-image streams stay aligned across kinds.
 */
export function applyTransform(
  kind: TransformKind,
  severity: number,
  img: Float32Array,
  h: number,
  w: number,
  rng: Rng,
): Float32Array {
  if (!Number.isInteger(severity) || severity < 0 || severity > 5) {
    throw new Error(`severity must be an integer in [0, 5], got ${severity}`);
  }
  const draw = rng(); // direction/sign draw, identical cost for every kind
  if (severity === 0) return img.slice();
  const s = severity - 1;
  switch (kind) {
    case "noise":
      return addNoise(img, NOISE_SIGMA[s], rng);
    case "blur": {
      let out = img;
      for (let p = 0; p < BLUR_PASSES[s]; p++) out = boxBlur(out, h, w, BLUR_RADIUS[s]);
      return out === img ? img.slice() : out;
    }
    case "rotation":
      return rotate(img, h, w, draw < 0.5 ? -ROTATION_DEG[s] : ROTATION_DEG[s]);
    case "contrast":
      return reduceContrast(img, CONTRAST_FACTOR[s]);
    case "translation": {
      const angle = draw * 2 * Math.PI;
      const sx = Math.round(TRANSLATION_PX[s] * Math.cos(angle));
      const sy = Math.round(TRANSLATION_PX[s] * Math.sin(angle));
      return translate(img, h, w, sx, sy);
    }
  }
}
