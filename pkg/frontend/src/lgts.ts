/**
 * LGTS v1: the little-endian binary table the calibration toolkit reads.
 *
 *   bytes 0..3   magic "LGTS"
 *   u8           version (1)
 *   u32          N rows
 *   u32          C classes (>= 2)
 *   f32 x N*C    logits, row-major
 *   u32 x N      labels in [0, C)
 *
 * The checker below re-derives every constraint from the bytes alone; the
 * writer never returns without its output passing the checker.
 */

import { readFileSync, renameSync, writeFileSync } from "fs";

export const MAGIC = "LGTS";
export const VERSION = 1;
const HEADER_BYTES = 13;

export class LgtsFormatError extends Error {}

export interface LgtsShape {
  n: number;
  c: number;
}

export interface LgtsTable extends LgtsShape {
  logits: Float32Array; // row-major, n*c entries
  labels: Uint32Array;
}

export function encodeLgts(table: LgtsTable): Buffer {
  const { n, c, logits, labels } = table;
  if (!Number.isInteger(n) || n < 1) throw new LgtsFormatError(`bad row count ${n}`);
  if (!Number.isInteger(c) || c < 2) throw new LgtsFormatError(`bad class count ${c}`);
  if (logits.length !== n * c) {
    throw new LgtsFormatError(`logits length ${logits.length} != ${n}*${c}`);
  }
  if (labels.length !== n) throw new LgtsFormatError(`labels length ${labels.length} != ${n}`);
  const buf = Buffer.alloc(HEADER_BYTES + n * c * 4 + n * 4);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt8(VERSION, 4);
  buf.writeUInt32LE(n, 5);
  buf.writeUInt32LE(c, 9);
  let off = HEADER_BYTES;
  for (let i = 0; i < logits.length; i++) {
    buf.writeFloatLE(logits[i], off);
    off += 4;
  }
  for (let i = 0; i < n; i++) {
    const y = labels[i];
    if (y >= c) throw new LgtsFormatError(`label ${y} out of range at row ${i}`);
    buf.writeUInt32LE(y, off);
    off += 4;
  }
  return buf;
}

/** Byte-level validation. Throws LgtsFormatError; returns the shape on success. */
export function checkLgtsBytes(buf: Buffer): LgtsShape {
  if (buf.length < HEADER_BYTES) {
    throw new LgtsFormatError(`file too short for a header (${buf.length} bytes)`);
  }
  const magic = buf.toString("ascii", 0, 4);
  if (magic !== MAGIC) throw new LgtsFormatError(`bad magic ${JSON.stringify(magic)}`);
  const version = buf.readUInt8(4);
  if (version !== VERSION) throw new LgtsFormatError(`unsupported version ${version}`);
  const n = buf.readUInt32LE(5);
  const c = buf.readUInt32LE(9);
  if (n < 1) throw new LgtsFormatError("empty table");
  if (c < 2) throw new LgtsFormatError(`class count must be >= 2, got ${c}`);
  const expect = HEADER_BYTES + n * c * 4 + n * 4;
  if (buf.length < expect) {
    throw new LgtsFormatError(`truncated payload: ${buf.length} bytes, expected ${expect}`);
  }
  if (buf.length > expect) {
    throw new LgtsFormatError(`${buf.length - expect} trailing bytes after payload`);
  }
  for (let i = 0; i < n * c; i++) {
    const v = buf.readFloatLE(HEADER_BYTES + i * 4);
    if (!Number.isFinite(v)) {
      throw new LgtsFormatError(`non-finite logit at flat index ${i}`);
    }
  }
  const labelsOff = HEADER_BYTES + n * c * 4;
  for (let i = 0; i < n; i++) {
    const y = buf.readUInt32LE(labelsOff + i * 4);
    if (y >= c) throw new LgtsFormatError(`label ${y} out of range [0, ${c}) at row ${i}`);
  }
  return { n, c };
}

export function decodeLgts(buf: Buffer): LgtsTable {
  const { n, c } = checkLgtsBytes(buf);
  const logits = new Float32Array(n * c);
  for (let i = 0; i < n * c; i++) logits[i] = buf.readFloatLE(HEADER_BYTES + i * 4);
  const labels = new Uint32Array(n);
  const off = HEADER_BYTES + n * c * 4;
  for (let i = 0; i < n; i++) labels[i] = buf.readUInt32LE(off + i * 4);
  return { n, c, logits, labels };
}

/** Write atomically (tmp + rename) and re-validate the written bytes. */
export function writeLgtsFile(path: string, table: LgtsTable): LgtsShape {
  const buf = encodeLgts(table);
  const tmp = path + ".tmp";
  writeFileSync(tmp, buf);
  renameSync(tmp, path);
  return checkLgtsBytes(readFileSync(path));
}

export function readLgtsFile(path: string): LgtsTable {
  return decodeLgts(readFileSync(path));
}
