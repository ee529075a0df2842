#!/usr/bin/env node
/**
 * taillight-export <command>
 *
 *   export-images --dataset <dir> --encoder <id> --out <dir>
 *   export-texts  --tree <file> --encoder <id> --dim <n> --out <file>
 *   verify        --bundle <dir> --texts <file> [--tree <file>]
 */
import { exportImages } from "./images.js";
import { exportTexts } from "./texts.js";
import { verifyExport } from "./verify.js";

function parseFlags(args: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < args.length; i += 2) {
    const key = args[i];
    const value = args[i + 1];
    if (!key?.startsWith("--") || value === undefined) {
      throw new Error(`bad arguments near ${JSON.stringify(args[i] ?? "")}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new Error(`missing required flag --${name}`);
  return value;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    switch (command) {
      case "export-images": {
        const manifest = exportImages({
          datasetDir: need(flags, "dataset"),
          encoderId: need(flags, "encoder"),
          outDir: need(flags, "out"),
        });
        console.log(
          `wrote ${manifest.classes.length} classes at dim ${manifest.dim} ` +
            `to ${need(flags, "out")}`,
        );
        return 0;
      }
      case "export-texts": {
        const entries = exportTexts({
          treePath: need(flags, "tree"),
          encoderId: flags.get("encoder") ?? "toy-clip-32",
          dim: Number(need(flags, "dim")),
          outPath: need(flags, "out"),
        });
        console.log(`wrote ${entries.length} phrase embeddings to ${need(flags, "out")}`);
        return 0;
      }
      case "verify": {
        const report = verifyExport(
          need(flags, "bundle"),
          need(flags, "texts"),
          flags.get("tree"),
        );
        if (report.ok) {
          console.log(
            `ok: ${report.classCount} classes, ${report.textCount} phrases`,
          );
          return 0;
        }
        for (const problem of report.problems) {
          console.error(`problem: ${problem}`);
        }
        return 1;
      }
      default:
        console.error(
          "usage: taillight-export <export-images|export-texts|verify> --flag value ...",
        );
        return 2;
    }
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 2;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
