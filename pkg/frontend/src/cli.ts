/**
 * cascal-exporter command line.
 *
 *   demo-init --out <dir> [--seed 7] [--n 360] [--classes 4] [--size 16] [--steps 80]
 *       writes dataset.json and a trained model.ckpt.json into <dir>
 *
 *   export --model <ckpt> --data <spec.json> --transform <kind> --severity <0-5>
 *          --out <file.lgts> [--batch 64] [--seed 0] [--manifest <path>]
 *       runs inference under the corruption and writes an LGTS table;
 *       appends {file, kind, severity, seed} to the manifest
 */

import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";
import { parseArgs } from "util";
import { DatasetSpec, generateDataset } from "./dataset";
import { exportLogits } from "./export";
import { saveCheckpoint, trainClassifier } from "./model";
import { TRANSFORM_KINDS, isTransformKind } from "./transforms";

function intFlag(value: string | undefined, name: string, fallback: number): number {
  if (value === undefined) return fallback;
  const v = Number(value);
  if (!Number.isInteger(v)) throw new Error(`--${name} must be an integer, got ${value}`);
  return v;
}

async function cmdDemoInit(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      out: { type: "string" },
      seed: { type: "string" },
      n: { type: "string" },
      classes: { type: "string" },
      size: { type: "string" },
      steps: { type: "string" },
    },
  });
  if (!values.out) throw new Error("demo-init requires --out <dir>");
  const size = intFlag(values.size, "size", 16);
  const spec: DatasetSpec = {
    kind: "oriented-stripes",
    n: intFlag(values.n, "n", 360),
    height: size,
    width: size,
    classes: intFlag(values.classes, "classes", 4),
    seed: intFlag(values.seed, "seed", 7),
  };
  mkdirSync(values.out, { recursive: true });
  const specPath = join(values.out, "dataset.json");
  writeFileSync(specPath, JSON.stringify(spec, null, 1) + "\n");
  console.log(`wrote ${specPath}`);

  const dataset = generateDataset(spec);
  const { model, accuracy } = trainClassifier(dataset, intFlag(values.steps, "steps", 80), spec.seed);
  const ckptPath = join(values.out, "model.ckpt.json");
  await saveCheckpoint(model, ckptPath);
  console.log(`wrote ${ckptPath}`);
  console.log(`train accuracy ${accuracy.toFixed(3)} on ${spec.n} images`);
  return 0;
}

async function cmdExport(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      model: { type: "string" },
      data: { type: "string" },
      transform: { type: "string" },
      severity: { type: "string" },
      out: { type: "string" },
      batch: { type: "string" },
      seed: { type: "string" },
      manifest: { type: "string" },
    },
  });
  for (const key of ["model", "data", "transform", "severity", "out"] as const) {
    if (!values[key]) throw new Error(`export requires --${key}`);
  }
  const transform = values.transform as string;
  if (!isTransformKind(transform)) {
    throw new Error(`unknown transform ${transform}; choose from ${TRANSFORM_KINDS.join(", ")}`);
  }
  const result = await exportLogits({
    modelPath: values.model as string,
    dataPath: values.data as string,
    transform,
    severity: intFlag(values.severity, "severity", NaN),
    outPath: values.out as string,
    batchSize: intFlag(values.batch, "batch", 64),
    seed: intFlag(values.seed, "seed", 0),
    manifestPath: values.manifest,
  });
  console.log(`wrote ${result.outPath} (n=${result.n}, c=${result.c})`);
  console.log(`updated ${result.manifestPath}`);
  return 0;
}

export async function run(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "demo-init") return await cmdDemoInit(rest);
    if (command === "export") return await cmdExport(rest);
    throw new Error(`unknown command ${command ?? "(none)"}; expected demo-init or export`);
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  run(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
