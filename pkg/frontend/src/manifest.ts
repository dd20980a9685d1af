import { existsSync, readFileSync, renameSync, writeFileSync } from "fs";

export interface ManifestEntry {
  file: string;
  kind: string;
  severity: number;
  seed: number;
}

/** Append one entry to manifest.json, creating the file on first use.
 * Same schema the calibration toolkit writes for its own meta-set dirs. */
export function appendManifestEntry(path: string, entry: ManifestEntry): ManifestEntry[] {
  let entries: ManifestEntry[] = [];
  if (existsSync(path)) {
    let parsed: unknown;
    try {
      parsed = JSON.parse(readFileSync(path, "utf-8"));
    } catch {
      throw new Error(`manifest ${path} is not valid JSON`);
    }
    if (!Array.isArray(parsed)) throw new Error(`manifest ${path} must hold a JSON array`);
    entries = parsed as ManifestEntry[];
  }
  entries.push(entry);
  const tmp = path + ".tmp";
  writeFileSync(tmp, JSON.stringify(entries, null, 1) + "\n");
  renameSync(tmp, path);
  return entries;
}
