#!/usr/bin/env node
// Render every figure kind from a directory of benchmark CLI run outputs.
// usage: node scripts/render-all.js [runsDir] [outDir]
const path = require("path");
const { main } = require("../dist/cli");

const runs = process.argv[2] || path.join(__dirname, "..", "tests", "fixtures");
const outDir = process.argv[3] || "figures";

const jobs = [
  ["memory-growth", "memory/results.csv", null],
  ["error-landscape", "verify/results.csv", null],
  ["memory-latency", "memory/results.csv", "memory/timings.csv"],
  ["sensitivity", "ghost_pulse/sensitivity.csv", null],
  ["stiffness", "stiffness/results.csv", null],
  ["complexity", "complexity/timings.csv", null],
];

let failures = 0;
for (const [kind, rel, extra] of jobs) {
  const args = ["render", "--kind", kind, "--in", path.join(runs, rel),
                "--out", path.join(outDir, `${kind}.svg`)];
  if (extra) args.push("--in2", path.join(runs, extra));
  failures += main(args) === 0 ? 0 : 1;
}
process.exit(failures === 0 ? 0 : 1);
