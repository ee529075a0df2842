/**
 * The engine's on-disk formats. These are the only contract between the
 * exporter and the training engine: a JSON manifest plus headerless
 * row-major float32 little-endian matrices, and a JSONL text-embedding
 * store keyed by exact (NFC-normalized, trimmed) phrase text.
 */
import * as fs from "node:fs";
import * as path from "node:path";

export interface ClassRecord {
  id: number;
  label: string;
  train_count: number;
  test_count: number;
  train_file: string;
  test_file: string;
}

export interface Manifest {
  version: 1;
  dim: number;
  dtype: "f32le";
  normalized: boolean;
  classes: ClassRecord[];
}

export function canonicalText(text: string): string {
  return text.normalize("NFC").trim();
}

export function writeMatrix(filePath: string, rows: Float64Array[], dim: number): void {
  const buf = Buffer.alloc(rows.length * dim * 4);
  let offset = 0;
  for (const row of rows) {
    if (row.length !== dim) {
      throw new Error(`row has ${row.length} values, expected ${dim}`);
    }
    for (let i = 0; i < dim; i++) {
      buf.writeFloatLE(row[i], offset);
      offset += 4;
    }
  }
  fs.writeFileSync(filePath, buf);
}

export function readMatrix(filePath: string, count: number, dim: number): Float64Array[] {
  const buf = fs.readFileSync(filePath);
  const expected = count * dim * 4;
  if (buf.length !== expected) {
    throw new Error(
      `${filePath} holds ${buf.length} bytes, expected ${expected} (${count}x${dim} f32le)`,
    );
  }
  const rows: Float64Array[] = [];
  for (let r = 0; r < count; r++) {
    const row = new Float64Array(dim);
    for (let i = 0; i < dim; i++) {
      row[i] = buf.readFloatLE((r * dim + i) * 4);
    }
    rows.push(row);
  }
  return rows;
}

export function writeManifest(dir: string, manifest: Manifest): void {
  fs.writeFileSync(
    path.join(dir, "manifest.json"),
    JSON.stringify(manifest, null, 2) + "\n",
    "utf-8",
  );
}

export function readManifest(dir: string): Manifest {
  const file = path.join(dir, "manifest.json");
  if (!fs.existsSync(file)) {
    throw new Error(`no manifest.json in ${dir}`);
  }
  return JSON.parse(fs.readFileSync(file, "utf-8")) as Manifest;
}

export interface TextEntry {
  text: string;
  vector: number[];
}

export function writeTextStore(filePath: string, entries: TextEntry[]): void {
  const lines = entries.map((e) => JSON.stringify({ text: e.text, vector: e.vector }));
  fs.writeFileSync(filePath, lines.join("\n") + "\n", "utf-8");
}

export function readTextStore(filePath: string): TextEntry[] {
  const raw = fs.readFileSync(filePath, "utf-8");
  return raw
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as TextEntry);
}

/** Phrases of a serialized language tree, deduplicated, in layer order. */
export function treePhrases(treePath: string): string[] {
  const doc = JSON.parse(fs.readFileSync(treePath, "utf-8"));
  const seen = new Set<string>();
  const ordered: string[] = [];
  for (const layer of doc.layers ?? []) {
    const classes = layer.classes ?? {};
    for (const cid of Object.keys(classes).sort((a, b) => Number(a) - Number(b))) {
      for (const phrase of classes[cid].phrases ?? []) {
        const key = canonicalText(phrase);
        if (!seen.has(key)) {
          seen.add(key);
          ordered.push(key);
        }
      }
    }
  }
  return ordered;
}
