import { describe, expect, it } from "vitest";
import { generateDataset } from "../src/dataset";
import { mulberry32 } from "../src/rng";
import { TRANSFORM_KINDS, applyTransform } from "../src/transforms";

const H = 16;
const W = 16;

function someImage(seed = 3): Float32Array {
  const ds = generateDataset({
    kind: "oriented-stripes",
    n: 1,
    height: H,
    width: W,
    classes: 2,
    seed,
  });
  return ds.images[0];
}

function l2(a: Float32Array, b: Float32Array): number {
  let s = 0;
  for (let i = 0; i < a.length; i++) s += (a[i] - b[i]) ** 2;
  return Math.sqrt(s);
}

describe("severity zero", () => {
  it("is the identity for every kind, as a fresh copy", () => {
    const img = someImage();
    for (const kind of TRANSFORM_KINDS) {
      const out = applyTransform(kind, 0, img, H, W, mulberry32(1));
      expect(out).not.toBe(img);
      expect(Array.from(out)).toEqual(Array.from(img));
    }
  });
});

describe("determinism", () => {
  it("same seed gives identical bytes, different seed differs", () => {
    const img = someImage();
    for (const kind of ["noise", "rotation", "translation"] as const) {
      const a = applyTransform(kind, 3, img, H, W, mulberry32(11));
      const b = applyTransform(kind, 3, img, H, W, mulberry32(11));
      const other = applyTransform(kind, 3, img, H, W, mulberry32(12));
      expect(Array.from(a)).toEqual(Array.from(b));
      expect(Array.from(a)).not.toEqual(Array.from(other));
    }
  });
});

describe("effects", () => {
  it("every kind moves the image at severity 3", () => {
    const img = someImage();
    for (const kind of TRANSFORM_KINDS) {
      const out = applyTransform(kind, 3, img, H, W, mulberry32(5));
      expect(l2(out, img)).toBeGreaterThan(0.01);
    }
  });

  it("keeps pixel values inside [0, 1] where the kind promises it", () => {
    const img = someImage();
    for (const kind of ["noise", "contrast", "blur"] as const) {
      const out = applyTransform(kind, 5, img, H, W, mulberry32(9));
      for (const v of out) {
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThanOrEqual(1);
      }
    }
  });

  it("contrast distance grows strictly with severity", () => {
    const img = someImage();
    let prev = 0;
    for (let s = 1; s <= 5; s++) {
      const d = l2(applyTransform("contrast", s, img, H, W, mulberry32(2)), img);
      expect(d).toBeGreaterThan(prev);
      prev = d;
    }
  });

  it("noise distance grows with severity on average", () => {
    const imgs = Array.from({ length: 30 }, (_, i) => someImage(i));
    let prev = 0;
    for (const s of [1, 3, 5]) {
      const rng = mulberry32(40 + s);
      const mean =
        imgs.reduce((acc, img) => acc + l2(applyTransform("noise", s, img, H, W, rng), img), 0) /
        imgs.length;
      expect(mean).toBeGreaterThan(prev);
      prev = mean;
    }
  });

  it("blur smooths: total variation shrinks", () => {
    const img = someImage();
    const out = applyTransform("blur", 4, img, H, W, mulberry32(6));
    const tv = (g: Float32Array) => {
      let s = 0;
      for (let y = 0; y < H; y++)
        for (let x = 1; x < W; x++) s += Math.abs(g[y * W + x] - g[y * W + x - 1]);
      return s;
    };
    expect(tv(out)).toBeLessThan(tv(img));
  });

  it("translation zero-fills, never invents mass", () => {
    const img = someImage();
    const out = applyTransform("translation", 5, img, H, W, mulberry32(8));
    const sum = (g: Float32Array) => g.reduce((a, v) => a + v, 0);
    expect(sum(out)).toBeLessThanOrEqual(sum(img) + 1e-6);
  });
});

describe("validation", () => {
  it("rejects severities outside [0, 5]", () => {
    const img = someImage();
    expect(() => applyTransform("noise", 6, img, H, W, mulberry32(1))).toThrow(/severity/);
    expect(() => applyTransform("noise", -1, img, H, W, mulberry32(1))).toThrow(/severity/);
    expect(() => applyTransform("noise", 2.5, img, H, W, mulberry32(1))).toThrow(/severity/);
  });
});
