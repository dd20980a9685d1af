import { basename, dirname, join } from "path";
import { generateDataset, loadDatasetSpec } from "./dataset";
import { LgtsShape, writeLgtsFile } from "./lgts";
import { appendManifestEntry } from "./manifest";
import { loadCheckpoint, runInference } from "./model";
import { mulberry32 } from "./rng";
import { TransformKind, applyTransform } from "./transforms";

export interface ExportJob {
  modelPath: string;
  dataPath: string;
  transform: TransformKind;
  severity: number;
  outPath: string;
  batchSize?: number;
  seed?: number;
  manifestPath?: string; // default: manifest.json next to outPath
}

export interface ExportResult extends LgtsShape {
  outPath: string;
  manifestPath: string;
}

export async function exportLogits(job: ExportJob): Promise<ExportResult> {
  const ckpt = await loadCheckpoint(job.modelPath);
  const spec = loadDatasetSpec(job.dataPath);
  if (spec.height !== ckpt.inputHeight || spec.width !== ckpt.inputWidth) {
    throw new Error(
      `checkpoint/dataset mismatch: model wants ${ckpt.inputHeight}x${ckpt.inputWidth} images, ` +
        `dataset provides ${spec.height}x${spec.width}`,
    );
  }
  if (spec.classes !== ckpt.classes) {
    throw new Error(
      `checkpoint/dataset mismatch: model has ${ckpt.classes} outputs, ` +
        `dataset has ${spec.classes} classes`,
    );
  }

  const dataset = generateDataset(spec);
  const seed = job.seed ?? 0;
  const rng = mulberry32(seed);
  const images = dataset.images.map((img) =>
    applyTransform(job.transform, job.severity, img, spec.height, spec.width, rng),
  );
  const logits = runInference(ckpt, images, job.batchSize ?? 64);

  // the writer re-checks the bytes on disk; shape comes from that check
  const shape = writeLgtsFile(job.outPath, {
    n: spec.n,
    c: ckpt.classes,
    logits,
    labels: dataset.labels,
  });

  const manifestPath = job.manifestPath ?? join(dirname(job.outPath), "manifest.json");
  appendManifestEntry(manifestPath, {
    file: basename(job.outPath),
    kind: job.transform,
    severity: job.severity,
    seed,
  });
  return { ...shape, outPath: job.outPath, manifestPath };
}
