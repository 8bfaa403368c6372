#!/usr/bin/env node
/**
 * render --kind K --in results.csv [--in2 timings.csv] --out figure.svg
 *
 * Renders one of the six figure kinds from the benchmark CLI's frozen CSV
 * outputs. Output is a deterministic SVG: re-rendering the same input is
 * byte-identical.
 */

import * as fs from "fs";
import * as path from "path";
import { parseArgs } from "util";

import { FIGURES, render } from "./figures";
import { SchemaError } from "./csv";

const USAGE = `usage: pgflow-figures render --kind KIND --in CSV [--in2 CSV] --out SVG
kinds: ${Object.keys(FIGURES).join(", ")}`;

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        in2: { type: "string" },
        out: { type: "string" },
      },
    });
  } catch (err) {
    console.error(String(err));
    console.error(USAGE);
    return 2;
  }
  const { positionals, values } = parsed;
  if (positionals[0] !== "render" || !values.kind || !values.in || !values.out) {
    console.error(USAGE);
    return 2;
  }
  try {
    const svg = render(values.kind, { input: values.in, extra: values.in2 });
    fs.mkdirSync(path.dirname(path.resolve(values.out)), { recursive: true });
    fs.writeFileSync(values.out, svg);
    console.log(`wrote ${values.out}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
