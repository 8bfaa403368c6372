import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { afterAll, describe, expect, it } from "vitest";

import { SchemaError, loadCsv } from "../src/csv";
import { FIGURES, render } from "../src/figures";
import { main } from "../src/cli";

const FIX = path.join(__dirname, "fixtures");

const CASES: Array<[string, string, string?]> = [
  ["memory-growth", "memory/results.csv"],
  ["error-landscape", "verify/results.csv"],
  ["memory-latency", "memory/results.csv", "memory/timings.csv"],
  ["sensitivity", "ghost_pulse/sensitivity.csv"],
  ["stiffness", "stiffness/results.csv"],
  ["complexity", "complexity/timings.csv"],
];

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "figures-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function inputs(rel: string, extra?: string) {
  return {
    input: path.join(FIX, rel),
    extra: extra ? path.join(FIX, extra) : undefined,
  };
}

describe("all six figure kinds render from a full CLI run", () => {
  it.each(CASES)("%s renders well-formed SVG", (kind, rel, extra) => {
    const svg = render(kind, inputs(rel, extra));
    expect(svg.startsWith("<svg ")).toBe(true);
    expect(svg.endsWith("</svg>\n")).toBe(true);
    expect(svg).toContain("<polyline");
    expect(svg.length).toBeGreaterThan(1000);
  });

  it.each(CASES)("%s re-render is byte-identical", (kind, rel, extra) => {
    const a = render(kind, inputs(rel, extra));
    const b = render(kind, inputs(rel, extra));
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("covers every registered kind", () => {
    expect(new Set(CASES.map((c) => c[0]))).toEqual(new Set(Object.keys(FIGURES)));
  });

  it.each(CASES)("%s keeps all geometry inside the canvas", (kind, rel, extra) => {
    const svg = render(kind, inputs(rel, extra));
    const coords: Array<[number, number]> = [];
    for (const m of svg.matchAll(/points="([^"]+)"/g)) {
      for (const p of m[1].split(" ")) {
        const [x, y] = p.split(",").map(Number);
        coords.push([x, y]);
      }
    }
    for (const m of svg.matchAll(/cx="([-\d.]+)" cy="([-\d.]+)"/g)) {
      coords.push([Number(m[1]), Number(m[2])]);
    }
    expect(coords.length).toBeGreaterThan(0);
    for (const [x, y] of coords) {
      expect(x).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThanOrEqual(680);
      expect(y).toBeGreaterThanOrEqual(0);
      expect(y).toBeLessThanOrEqual(440);
    }
  });
});

describe("figure content", () => {
  it("sensitivity trace marks the pulse position", () => {
    const svg = render("sensitivity", inputs("ghost_pulse/sensitivity.csv"));
    expect(svg).toContain("pulse at t=100000");
    expect(svg).toContain('stroke-dasharray="6,4"');
  });

  it("memory growth draws one line per strategy, flat vs growing", () => {
    const svg = render("memory-growth", inputs("memory/results.csv"));
    for (const strategy of ["streamed-discard", "streamed-memory", "unrolled"]) {
      expect(svg).toContain(strategy);
    }
    // the discard strategy's total line is flat: its polyline has a single y
    const lines = [...svg.matchAll(/<polyline points="([^"]+)"/g)].map((m) =>
      m[1].split(" ").map((p) => p.split(",").map(Number))
    );
    const flat = lines.filter((pts) => new Set(pts.map((p) => p[1])).size === 1);
    const growing = lines.filter((pts) => pts.length > 1 && pts[0][1] > pts[pts.length - 1][1]);
    expect(flat.length).toBeGreaterThan(0); // the O(1) working set
    expect(growing.length).toBeGreaterThan(0); // payload / unrolled graph
  });

  it("stiffness panel marks underflowed grid points distinctly", () => {
    const svg = render("stiffness", inputs("stiffness/results.csv"));
    expect(svg).toContain('fill="#d62728"'); // filled red: naive cumprod died
    expect(svg).toContain('fill="#ffffff"'); // hollow: survived
    expect(svg).toContain("tolerance 1e-6");
  });

  it("complexity curve has one series per method", () => {
    const svg = render("complexity", inputs("complexity/timings.csv"));
    expect(svg).toContain("dense-rtrl");
    expect(svg).toContain("pgf");
  });
});

describe("failure modes are loud and named", () => {
  it("rejects unknown figure kinds", () => {
    expect(() => render("pie-chart", inputs("memory/results.csv"))).toThrow(
      /unknown figure kind "pie-chart"/
    );
  });

  it("names missing columns", () => {
    const bad = path.join(tmp, "bad.csv");
    fs.writeFileSync(bad, "strategy,L\nx,1\n");
    expect(() => render("memory-growth", { input: bad })).toThrow(
      /missing required column\(s\): graph_peak_bytes, total_peak_bytes/
    );
  });

  it("refuses empty CSVs instead of drawing an empty figure", () => {
    const empty = path.join(tmp, "empty.csv");
    fs.writeFileSync(empty, "strategy,L,graph_peak_bytes,io_peak_bytes,total_peak_bytes\n");
    expect(() => render("memory-growth", { input: empty })).toThrow(/no data rows/);
  });

  it("refuses missing files", () => {
    expect(() => loadCsv(path.join(tmp, "nope.csv"), ["a"])).toThrow(/does not exist/);
  });

  it("sensitivity requires a pulse marker row", () => {
    const noPulse = path.join(tmp, "nopulse.csv");
    fs.writeFileSync(noPulse, "t,mag,is_pulse\n0,0.0,0\n1,1.0,0\n");
    expect(() => render("sensitivity", { input: noPulse })).toThrow(/is_pulse=1/);
  });
});

describe("command line", () => {
  it("renders end to end and returns 0", () => {
    const out = path.join(tmp, "cli.svg");
    const rc = main([
      "render", "--kind", "complexity",
      "--in", path.join(FIX, "complexity/timings.csv"),
      "--out", out,
    ]);
    expect(rc).toBe(0);
    const first = fs.readFileSync(out, "utf8");
    expect(main([
      "render", "--kind", "complexity",
      "--in", path.join(FIX, "complexity/timings.csv"),
      "--out", out,
    ])).toBe(0);
    expect(fs.readFileSync(out, "utf8")).toBe(first); // byte-identical re-render
  });

  it("returns 2 on usage errors and 1 on schema errors", () => {
    expect(main(["render", "--kind", "complexity"])).toBe(2);
    expect(main(["bogus"])).toBe(2);
    const bad = path.join(tmp, "bad2.csv");
    fs.writeFileSync(bad, "method,N\nx,8\n");
    expect(main([
      "render", "--kind", "complexity", "--in", bad,
      "--out", path.join(tmp, "x.svg"),
    ])).toBe(1);
  });
});
