/**
 * Language tree -> text embedding store.
 *
 * Every phrase in every layer is embedded exactly once (exact-match keying
 * after NFC normalization and trimming) and written as unit vectors to the
 * engine's texts.jsonl format.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { encodeText } from "./encoder.js";
import { TextEntry, treePhrases, writeTextStore } from "./format.js";

export interface ExportTextsJob {
  treePath: string;
  encoderId: string;
  dim: number;
  outPath: string;
}

export function exportTexts(job: ExportTextsJob): TextEntry[] {
  if (!fs.existsSync(job.treePath)) {
    throw new Error(`tree file not found: ${job.treePath}`);
  }
  const phrases = treePhrases(job.treePath);
  const entries: TextEntry[] = phrases.map((text) => ({
    text,
    vector: Array.from(encodeText(text, job.dim, job.encoderId)),
  }));
  fs.mkdirSync(path.dirname(path.resolve(job.outPath)), { recursive: true });
  writeTextStore(job.outPath, entries);
  return entries;
}
