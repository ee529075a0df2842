/**
 * Re-validate an export: every engine-side invariant plus phrase coverage.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { canonicalText, readManifest, readTextStore, treePhrases } from "./format.js";

export interface VerifyReport {
  ok: boolean;
  problems: string[];
  classCount: number;
  textCount: number;
}

export function verifyExport(
  bundleDir: string,
  textsPath: string,
  treePath?: string,
): VerifyReport {
  const problems: string[] = [];
  let classCount = 0;
  let textCount = 0;

  try {
    const manifest = readManifest(bundleDir);
    classCount = manifest.classes.length;
    if (manifest.dtype !== "f32le") {
      problems.push(`unsupported dtype tag ${JSON.stringify(manifest.dtype)}`);
    }
    const ids = manifest.classes.map((c) => c.id).sort((a, b) => a - b);
    ids.forEach((id, i) => {
      if (id !== i) problems.push(`class ids are not contiguous from 0: ${ids.join(",")}`);
    });
    for (const rec of manifest.classes) {
      if (!rec.label) problems.push(`class ${rec.id} has an empty label`);
      if (rec.train_count < 1) problems.push(`class ${rec.id} has train_count < 1`);
      for (const [file, count] of [
        [rec.train_file, rec.train_count],
        [rec.test_file, rec.test_count],
      ] as const) {
        const full = path.join(bundleDir, file);
        if (!fs.existsSync(full)) {
          problems.push(`matrix file missing: ${file}`);
          continue;
        }
        const size = fs.statSync(full).size;
        const expected = count * manifest.dim * 4;
        if (size !== expected) {
          problems.push(`${file} holds ${size} bytes, expected ${expected}`);
        }
      }
    }

    const entries = readTextStore(textsPath);
    textCount = entries.length;
    const byText = new Map<string, number[]>();
    for (const entry of entries) {
      if (byText.has(entry.text)) {
        problems.push(`duplicate store entry: ${JSON.stringify(entry.text)}`);
      }
      byText.set(entry.text, entry.vector);
      if (entry.vector.length !== manifest.dim) {
        problems.push(
          `vector for ${JSON.stringify(entry.text)} has dim ${entry.vector.length}, ` +
            `bundle dim is ${manifest.dim}`,
        );
      }
      const norm = Math.sqrt(entry.vector.reduce((acc, v) => acc + v * v, 0));
      if (Math.abs(norm - 1) > 1e-5) {
        problems.push(`vector for ${JSON.stringify(entry.text)} has norm ${norm}`);
      }
    }

    if (treePath) {
      for (const phrase of treePhrases(treePath)) {
        if (!byText.has(canonicalText(phrase))) {
          problems.push(`tree phrase missing from store: ${JSON.stringify(phrase)}`);
        }
      }
    }
  } catch (err) {
    problems.push(err instanceof Error ? err.message : String(err));
  }

  return { ok: problems.length === 0, problems, classCount, textCount };
}
