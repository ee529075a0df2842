import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { EncoderLoadFailure, loadImageEncoder } from "../src/encoder.js";
import { readManifest, readMatrix } from "../src/format.js";
import { DatasetMissing, exportImages } from "../src/images.js";
import { writeToyDataset, TOY_CLASSES } from "./helpers.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "tl-export-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

describe("exportImages", () => {
  it("writes a loadable manifest with per-class matrices", () => {
    const dataset = path.join(tmp, "data");
    writeToyDataset(dataset);
    const out = path.join(tmp, "bundle");
    const manifest = exportImages({ datasetDir: dataset, encoderId: "toy-clip-32", outDir: out });

    expect(manifest.dim).toBe(32);
    expect(manifest.dtype).toBe("f32le");
    expect(manifest.classes.map((c) => c.label)).toEqual(
      TOY_CLASSES.map((c) => c.label).sort(),
    );
    const back = readManifest(out);
    expect(back).toEqual(manifest);
    for (const rec of back.classes) {
      const rows = readMatrix(path.join(out, rec.train_file), rec.train_count, back.dim);
      expect(rows.length).toBe(6);
      expect(rows[0].length).toBe(32);
    }
  });

  it("is bitwise deterministic across re-exports", () => {
    const dataset = path.join(tmp, "data2");
    writeToyDataset(dataset);
    const outA = path.join(tmp, "bundleA");
    const outB = path.join(tmp, "bundleB");
    exportImages({ datasetDir: dataset, encoderId: "toy-clip-16", outDir: outA });
    exportImages({ datasetDir: dataset, encoderId: "toy-clip-16", outDir: outB });
    for (const name of fs.readdirSync(outA).sort()) {
      const a = fs.readFileSync(path.join(outA, name));
      const b = fs.readFileSync(path.join(outB, name));
      expect(a.equals(b), name).toBe(true);
    }
  });

  it("separates the toy classes linearly in feature space", () => {
    const dataset = path.join(tmp, "data3");
    writeToyDataset(dataset);
    const out = path.join(tmp, "bundle3");
    const manifest = exportImages({ datasetDir: dataset, encoderId: "toy-clip-32", outDir: out });
    // nearest-centroid on exported features classifies every test row
    const centroids: Float64Array[] = [];
    const tests: Array<{ rows: Float64Array[]; id: number }> = [];
    for (const rec of manifest.classes) {
      const train = readMatrix(path.join(out, rec.train_file), rec.train_count, manifest.dim);
      const centroid = new Float64Array(manifest.dim);
      for (const row of train) for (let i = 0; i < row.length; i++) centroid[i] += row[i];
      for (let i = 0; i < centroid.length; i++) centroid[i] /= train.length;
      centroids.push(centroid);
      tests.push({
        rows: readMatrix(path.join(out, rec.test_file), rec.test_count, manifest.dim),
        id: rec.id,
      });
    }
    for (const { rows, id } of tests) {
      for (const row of rows) {
        let best = -1;
        let bestDist = Infinity;
        centroids.forEach((c, cid) => {
          let d = 0;
          for (let i = 0; i < row.length; i++) d += (row[i] - c[i]) ** 2;
          if (d < bestDist) {
            bestDist = d;
            best = cid;
          }
        });
        expect(best).toBe(id);
      }
    }
  });

  it("rejects unknown encoders and missing datasets", () => {
    expect(() => loadImageEncoder("resnet-900")).toThrow(EncoderLoadFailure);
    expect(() =>
      exportImages({ datasetDir: path.join(tmp, "nope"), encoderId: "toy-clip-8", outDir: tmp }),
    ).toThrow(DatasetMissing);
  });
});
