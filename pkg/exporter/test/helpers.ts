import * as fs from "node:fs";
import * as path from "node:path";
import { PNG } from "pngjs";

import { mulberry32, hashString } from "../src/encoder.js";

/** Deterministic toy PNG: class base color plus per-image speckle. */
export function writeToyPng(
  filePath: string,
  base: [number, number, number],
  seedText: string,
  size = 24,
): void {
  const png = new PNG({ width: size, height: size });
  const rand = mulberry32(hashString(seedText));
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const idx = (size * y + x) << 2;
      png.data[idx] = Math.min(255, Math.max(0, base[0] + Math.floor(rand() * 60) - 30));
      png.data[idx + 1] = Math.min(255, Math.max(0, base[1] + Math.floor(rand() * 60) - 30));
      png.data[idx + 2] = Math.min(255, Math.max(0, base[2] + Math.floor(rand() * 60) - 30));
      png.data[idx + 3] = 255;
    }
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

export const TOY_CLASSES: Array<{ label: string; color: [number, number, number] }> = [
  { label: "apple", color: [200, 40, 40] },
  { label: "banana", color: [220, 210, 60] },
  { label: "cherry", color: [120, 10, 60] },
];

/** <root>/train/<label>/*.png and <root>/test/<label>/*.png */
export function writeToyDataset(root: string, trainPer = 6, testPer = 3): void {
  for (const { label, color } of TOY_CLASSES) {
    for (let i = 0; i < trainPer; i++) {
      writeToyPng(path.join(root, "train", label, `img_${i}.png`), color, `${label}-train-${i}`);
    }
    for (let i = 0; i < testPer; i++) {
      writeToyPng(path.join(root, "test", label, `img_${i}.png`), color, `${label}-test-${i}`);
    }
  }
}

/** A minimal language tree in the engine's serialized schema. */
export function writeToyTree(filePath: string): void {
  const labels = TOY_CLASSES.map((c) => c.label);
  const layer = (kind: string, phrasesByClass: Record<number, string[]>) => ({
    kind,
    classes: Object.fromEntries(
      Object.entries(phrasesByClass).map(([cid, phrases]) => [
        cid,
        { phrases, provenance: null },
      ]),
    ),
  });
  const doc = {
    version: 1,
    layers: [
      layer("p1", Object.fromEntries(labels.map((_, i) => [i, ["a bowl of small fruit"]]))),
      layer("fixed", Object.fromEntries(labels.map((label, i) => [i, [`a photo of ${label}`]]))),
      layer(
        "p2",
        Object.fromEntries(
          labels.map((label, i) => [i, [`glossy ${label} skin`, `fresh ${label} stem`]]),
        ),
      ),
    ],
  };
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, JSON.stringify(doc, null, 2) + "\n", "utf-8");
}
