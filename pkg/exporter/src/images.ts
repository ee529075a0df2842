/**
 * Image dataset -> embedding bundle.
 *
 * Expected dataset layout:
 *   <root>/train/<class label>/*.png
 *   <root>/test/<class label>/*.png     (a class's test dir may be absent)
 *
 * Class ids are assigned in sorted label order; files are processed in
 * sorted name order, so exports are deterministic.
 */
import * as fs from "node:fs";
import * as path from "node:path";
import { PNG } from "pngjs";

import { ImageEncoder, loadImageEncoder } from "./encoder.js";
import { ClassRecord, Manifest, writeManifest, writeMatrix } from "./format.js";

export class DatasetMissing extends Error {}

export interface ExportImagesJob {
  datasetDir: string;
  encoderId: string;
  outDir: string;
  /** Honored by batched real encoders; the built-in one encodes per image. */
  batchSize?: number;
  device?: string;
}

/** Box-resample decoded RGBA pixels to a gridSize x gridSize RGB grid in [-0.5, 0.5]. */
export function gridFeatures(png: PNG, gridSize: number): Float64Array {
  const out = new Float64Array(gridSize * gridSize * 3);
  const cellW = png.width / gridSize;
  const cellH = png.height / gridSize;
  for (let gy = 0; gy < gridSize; gy++) {
    for (let gx = 0; gx < gridSize; gx++) {
      const x0 = Math.floor(gx * cellW);
      const x1 = Math.max(x0 + 1, Math.floor((gx + 1) * cellW));
      const y0 = Math.floor(gy * cellH);
      const y1 = Math.max(y0 + 1, Math.floor((gy + 1) * cellH));
      let r = 0;
      let g = 0;
      let b = 0;
      let n = 0;
      for (let y = y0; y < y1 && y < png.height; y++) {
        for (let x = x0; x < x1 && x < png.width; x++) {
          const idx = (png.width * y + x) << 2;
          r += png.data[idx];
          g += png.data[idx + 1];
          b += png.data[idx + 2];
          n += 1;
        }
      }
      const base = (gy * gridSize + gx) * 3;
      out[base] = r / n / 255 - 0.5;
      out[base + 1] = g / n / 255 - 0.5;
      out[base + 2] = b / n / 255 - 0.5;
    }
  }
  return out;
}

export function encodeImageFile(filePath: string, encoder: ImageEncoder): Float64Array {
  const png = PNG.sync.read(fs.readFileSync(filePath));
  return encoder.encode(gridFeatures(png, encoder.gridSize));
}

function listPngs(dir: string): string[] {
  if (!fs.existsSync(dir)) return [];
  return fs
    .readdirSync(dir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort();
}

export function exportImages(job: ExportImagesJob): Manifest {
  const trainRoot = path.join(job.datasetDir, "train");
  if (!fs.existsSync(trainRoot)) {
    throw new DatasetMissing(`no train/ directory under ${job.datasetDir}`);
  }
  const labels = fs
    .readdirSync(trainRoot)
    .filter((name) => fs.statSync(path.join(trainRoot, name)).isDirectory())
    .sort();
  if (labels.length === 0) {
    throw new DatasetMissing(`no class directories under ${trainRoot}`);
  }
  const encoder = loadImageEncoder(job.encoderId);
  fs.mkdirSync(job.outDir, { recursive: true });

  const classes: ClassRecord[] = [];
  labels.forEach((label, id) => {
    const trainFiles = listPngs(path.join(trainRoot, label));
    if (trainFiles.length === 0) {
      throw new DatasetMissing(`class ${label} has no train images`);
    }
    const testFiles = listPngs(path.join(job.datasetDir, "test", label));
    const trainRows = trainFiles.map((f) =>
      encodeImageFile(path.join(trainRoot, label, f), encoder),
    );
    const testRows = testFiles.map((f) =>
      encodeImageFile(path.join(job.datasetDir, "test", label, f), encoder),
    );
    const trainFile = `class_${String(id).padStart(3, "0")}_train.bin`;
    const testFile = `class_${String(id).padStart(3, "0")}_test.bin`;
    writeMatrix(path.join(job.outDir, trainFile), trainRows, encoder.dim);
    writeMatrix(path.join(job.outDir, testFile), testRows, encoder.dim);
    classes.push({
      id,
      label,
      train_count: trainRows.length,
      test_count: testRows.length,
      train_file: trainFile,
      test_file: testFile,
    });
  });

  // Provenance keys beyond the engine schema; the engine ignores them.
  const manifest: Manifest & { encoder: string; preprocessing: string } = {
    version: 1,
    dim: encoder.dim,
    dtype: "f32le",
    normalized: false,
    classes,
    encoder: encoder.id,
    preprocessing: `rgb-box-grid-${encoder.gridSize}x${encoder.gridSize}`,
  };
  writeManifest(job.outDir, manifest);
  return manifest;
}
