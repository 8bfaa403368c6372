import { Row, SchemaError, bool, loadCsv, num } from "./csv";
import {
  HEIGHT,
  MARGIN,
  PALETTE,
  WIDTH,
  circle,
  document as svgDocument,
  extent,
  fmt,
  frame,
  legend,
  polyline,
  pow10Label,
} from "./svg";

export interface FigureInputs {
  input: string;
  extra?: string; // second CSV for figures that overlay another file
}

type Renderer = (inputs: FigureInputs) => string;

function groupBy(rows: Row[], key: (r: Row) => string): Map<string, Row[]> {
  const out = new Map<string, Row[]>();
  for (const r of rows) {
    const k = key(r);
    const bucket = out.get(k);
    if (bucket) bucket.push(r);
    else out.set(k, [r]);
  }
  return out;
}

function intLogTicks(domain: [number, number]): number[] {
  const out: number[] = [];
  for (let t = Math.ceil(domain[0]); t <= Math.floor(domain[1]); t++) out.push(t);
  return out;
}

function log10Safe(v: number, floor: number): number {
  return v > 0 ? Math.log10(v) : floor;
}

/** Peak tracked bytes vs sequence length, one line per strategy. */
export function memoryGrowth({ input }: FigureInputs): string {
  const rows = loadCsv(input, ["strategy", "L", "graph_peak_bytes", "total_peak_bytes"]);
  const groups = groupBy(rows, (r) => r.strategy);
  const xs = rows.map((r) => num(r, "L"));
  const ys = rows.map((r) => num(r, "total_peak_bytes") / 1024);
  const f = frame(
    "Peak tracked memory vs sequence length",
    extent(xs),
    extent([0, ...ys]),
    "sequence length L",
    "peak tracked KiB (total = graph + IO)"
  );
  const entries: Array<[string, string]> = [];
  let i = 0;
  for (const [strategy, sub] of groups) {
    const color = PALETTE[i % PALETTE.length];
    const sorted = [...sub].sort((a, b) => num(a, "L") - num(b, "L"));
    const pts = sorted.map(
      (r) => [f.x(num(r, "L")), f.y(num(r, "total_peak_bytes") / 1024)] as [number, number]
    );
    f.body.push(polyline(pts, color));
    pts.forEach((p) => f.body.push(circle(p[0], p[1], color)));
    // dashed companion: the graph-only component, flat for the streamed paths
    const gpts = sorted.map(
      (r) => [f.x(num(r, "L")), f.y(num(r, "graph_peak_bytes") / 1024)] as [number, number]
    );
    f.body.push(polyline(gpts, color, "5,4"));
    entries.push([strategy, color]);
    i++;
  }
  entries.push(["(dashed: graph class only)", "#888888"]);
  f.body.push(...legend(entries, MARGIN.left + 12, MARGIN.top + 16));
  return svgDocument(f.body);
}

/** Mean exactness error vs length, one line per (D, N) shape. */
export function errorLandscape({ input }: FigureInputs): string {
  const rows = loadCsv(input, ["L", "D", "N", "seed", "rel_err_unrolled"]);
  const groups = groupBy(rows, (r) => `D=${r.D}, N=${r.N}`);
  const pts: Array<[string, Array<[number, number]>]> = [];
  for (const [label, sub] of groups) {
    const byL = groupBy(sub, (r) => r.L);
    const series: Array<[number, number]> = [];
    for (const [l, lrows] of byL) {
      const mean =
        lrows.reduce((acc, r) => acc + num(r, "rel_err_unrolled"), 0) / lrows.length;
      series.push([Math.log10(Number(l)), log10Safe(mean, -18)]);
    }
    series.sort((a, b) => a[0] - b[0]);
    pts.push([label, series]);
  }
  const allX = pts.flatMap(([, s]) => s.map((p) => p[0]));
  const allY = pts.flatMap(([, s]) => s.map((p) => p[1]));
  const f = frame(
    "Exactness: mean relative error vs length",
    extent(allX),
    extent(allY),
    "sequence length L",
    "mean relative error vs unrolled oracle",
    {
      xTicks: intLogTicks(extent(allX)),
      yTicks: intLogTicks(extent(allY)),
      xTickFormat: pow10Label,
      yTickFormat: pow10Label,
    }
  );
  const entries: Array<[string, string]> = [];
  pts.forEach(([label, series], i) => {
    const color = PALETTE[i % PALETTE.length];
    const mapped = series.map((p) => [f.x(p[0]), f.y(p[1])] as [number, number]);
    f.body.push(polyline(mapped, color));
    mapped.forEach((p) => f.body.push(circle(p[0], p[1], color)));
    entries.push([label, color]);
  });
  f.body.push(...legend(entries, WIDTH - MARGIN.right - 150, MARGIN.top + 16));
  return svgDocument(f.body);
}

/** Grouped peak-memory bars per strategy, optional latency overlay. */
export function memoryLatency({ input, extra }: FigureInputs): string {
  const rows = loadCsv(input, [
    "strategy",
    "L",
    "graph_peak_bytes",
    "io_peak_bytes",
  ]);
  const groups = groupBy(rows, (r) => r.strategy);
  const strategies = [...groups.keys()];
  const picks = strategies.map((s) => {
    const sub = groups.get(s)!;
    return sub.reduce((a, b) => (num(a, "L") >= num(b, "L") ? a : b));
  });
  const kib = (r: Row, c: string) => num(r, c) / 1024;
  const maxY = Math.max(...picks.flatMap((r) => [kib(r, "graph_peak_bytes"), kib(r, "io_peak_bytes")]));

  const body: string[] = [];
  body.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`);
  body.push(
    `<text x="${fmt(WIDTH / 2)}" y="24" text-anchor="middle" ` +
      `font-family="Helvetica, Arial, sans-serif" font-size="15" font-weight="bold">` +
      `Peak memory by strategy (at largest L)</text>`
  );
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  const yScale = (v: number) => y0 - (v / (maxY * 1.1)) * (y0 - y1);
  const slot = (x1 - x0) / strategies.length;
  const barW = slot * 0.28;
  const colors = { graph: "#1f77b4", io: "#ff7f0e" };

  picks.forEach((r, i) => {
    const cx = x0 + slot * (i + 0.5);
    const gh = yScale(kib(r, "graph_peak_bytes"));
    const ih = yScale(kib(r, "io_peak_bytes"));
    body.push(
      `<rect x="${fmt(cx - barW - 2)}" y="${fmt(gh)}" width="${fmt(barW)}" ` +
        `height="${fmt(y0 - gh)}" fill="${colors.graph}"/>`
    );
    body.push(
      `<rect x="${fmt(cx + 2)}" y="${fmt(ih)}" width="${fmt(barW)}" ` +
        `height="${fmt(y0 - ih)}" fill="${colors.io}"/>`
    );
    body.push(
      `<text x="${fmt(cx)}" y="${fmt(y0 + 18)}" text-anchor="middle" ` +
        `font-family="Helvetica, Arial, sans-serif" font-size="11">${r.strategy} ` +
        `(L=${r.L})</text>`
    );
  });
  // y axis with KiB ticks
  for (let i = 0; i <= 5; i++) {
    const v = (maxY * 1.1 * i) / 5;
    body.push(
      `<line x1="${fmt(x0)}" y1="${fmt(yScale(v))}" x2="${fmt(x1)}" y2="${fmt(yScale(v))}" ` +
        `stroke="#dddddd" stroke-width="1"/>`
    );
    body.push(
      `<text x="${fmt(x0 - 8)}" y="${fmt(yScale(v) + 4)}" text-anchor="end" ` +
        `font-family="Helvetica, Arial, sans-serif" font-size="11">${fmt(v)}</text>`
    );
  }
  body.push(
    `<rect x="${fmt(x0)}" y="${fmt(y1)}" width="${fmt(x1 - x0)}" height="${fmt(y0 - y1)}" ` +
      `fill="none" stroke="#333333" stroke-width="1"/>`
  );
  body.push(
    `<text x="20" y="${fmt(HEIGHT / 2)}" text-anchor="middle" ` +
      `font-family="Helvetica, Arial, sans-serif" font-size="12" ` +
      `transform="rotate(-90 20 ${fmt(HEIGHT / 2)})">peak tracked KiB</text>`
  );
  const entries: Array<[string, string]> = [
    ["graph working set", colors.graph],
    ["IO payload", colors.io],
  ];

  if (extra) {
    // latency overlay: seconds per 1000 steps at each strategy's largest L
    const trows = loadCsv(extra, ["strategy", "L", "seconds"]);
    const tg = groupBy(trows, (r) => r.strategy);
    const lat = strategies.map((s, i) => {
      const sub = tg.get(s);
      if (!sub) throw new SchemaError(`timings CSV missing strategy ${s}`);
      const pick = sub.reduce((a, b) => (num(a, "L") >= num(b, "L") ? a : b));
      return [i, (num(pick, "seconds") / num(pick, "L")) * 1000] as [number, number];
    });
    const maxLat = Math.max(...lat.map((p) => p[1]));
    const latScale = (v: number) => y0 - (v / (maxLat * 1.3)) * (y0 - y1);
    const pts = lat.map(
      (p) => [x0 + slot * (p[0] + 0.5), latScale(p[1])] as [number, number]
    );
    body.push(polyline(pts, "#2ca02c", "6,4"));
    pts.forEach((p) => body.push(circle(p[0], p[1], "#2ca02c")));
    lat.forEach((p, i) => {
      body.push(
        `<text x="${fmt(pts[i][0] + 6)}" y="${fmt(pts[i][1] - 8)}" ` +
          `font-family="Helvetica, Arial, sans-serif" font-size="10" ` +
          `fill="#2ca02c">${p[1].toPrecision(3)}s/1k</text>`
      );
    });
    entries.push(["latency (s per 1000 steps)", "#2ca02c"]);
  }
  body.push(...legend(entries, x0 + 12, y1 + 16));
  return svgDocument(body);
}

/** Sensitivity-magnitude trace with the pulse position marked. */
export function sensitivityTrace({ input }: FigureInputs): string {
  const rows = loadCsv(input, ["t", "mag", "is_pulse"]);
  const pulseRow = rows.find((r) => r.is_pulse === "1");
  if (!pulseRow) {
    throw new SchemaError("sensitivity CSV has no row with is_pulse=1");
  }
  const t0 = num(pulseRow, "t");
  const mags = rows.map((r) => num(r, "mag"));
  const ts = rows.map((r) => num(r, "t"));
  let minPositive = Infinity;
  for (const m of mags) if (m > 0 && m < minPositive) minPositive = m;
  const floor = Number.isFinite(minPositive)
    ? Math.floor(Math.log10(minPositive)) - 2
    : -18;

  // max-pooled downsampling keeps the pulse visible at any width
  const buckets = Math.min(2048, rows.length);
  const perBucket = Math.ceil(rows.length / buckets);
  const series: Array<[number, number]> = [];
  for (let b = 0; b < rows.length; b += perBucket) {
    const end = Math.min(b + perBucket, rows.length);
    let mx = 0;
    for (let i = b; i < end; i++) mx = Math.max(mx, mags[i]);
    series.push([ts[b] + (end - 1 - b) / 2, log10Safe(mx, floor)]);
  }
  const ys = series.map((p) => p[1]);
  const f = frame(
    "Sensitivity to a localized input pulse",
    extent(ts, 0.02),
    extent([floor, ...ys]),
    "step t",
    "output variation magnitude",
    { yTicks: intLogTicks(extent([floor, ...ys])).filter((t) => t % 2 === 0),
      yTickFormat: pow10Label }
  );
  const pts = series.map((p) => [f.x(p[0]), f.y(p[1])] as [number, number]);
  f.body.push(polyline(pts, PALETTE[0]));
  const px = fmt(f.x(t0));
  f.body.push(
    `<line x1="${px}" y1="${fmt(f.y(f.y.domain[0]))}" ` +
      `x2="${px}" y2="${fmt(f.y(f.y.domain[1]))}" stroke="#d62728" ` +
      `stroke-width="1.5" stroke-dasharray="6,4"/>`
  );
  f.body.push(
    `<text x="${fmt(f.x(t0) + 6)}" y="${fmt(MARGIN.top + 14)}" ` +
      `font-family="Helvetica, Arial, sans-serif" font-size="11" ` +
      `fill="#d62728">pulse at t=${t0}</text>`
  );
  return svgDocument(f.body);
}

/** Stabilized error across the stiff-decay grid, underflow points marked. */
export function stiffnessPanel({ input }: FigureInputs): string {
  const rows = loadCsv(input, ["stiffness", "rel_err", "naive_underflowed"]);
  const xs = rows.map((r) => num(r, "stiffness"));
  const ys = rows.map((r) => log10Safe(num(r, "rel_err"), -18));
  const f = frame(
    "Stabilized single-precision error across stiff decay",
    extent(xs),
    extent([...ys, -6, -8]),
    "per-step log decay (stiff on the left)",
    "relative error vs double-precision oracle",
    { yTicks: intLogTicks(extent([...ys, -6, -8])), yTickFormat: pow10Label }
  );
  const pts = rows.map(
    (r, i) => [f.x(xs[i]), f.y(ys[i]), bool(r, "naive_underflowed")] as [number, number, boolean]
  );
  f.body.push(polyline(pts.map((p) => [p[0], p[1]]), PALETTE[0]));
  pts.forEach((p) => f.body.push(circle(p[0], p[1], p[2] ? "#d62728" : PALETTE[0], 4, p[2])));
  const tol = fmt(f.y(-6));
  f.body.push(
    `<line x1="${fmt(f.x(f.x.domain[0]))}" y1="${tol}" x2="${fmt(f.x(f.x.domain[1]))}" ` +
      `y2="${tol}" stroke="#2ca02c" stroke-width="1.5" stroke-dasharray="6,4"/>`
  );
  f.body.push(...legend(
    [
      ["stabilized f32 vs f64", PALETTE[0]],
      ["red: naive f32 cumulative product underflowed", "#d62728"],
      ["tolerance 1e-6", "#2ca02c"],
    ],
    MARGIN.left + 12,
    MARGIN.top + 16
  ));
  return svgDocument(f.body);
}

/** Log-log execution time vs state dimension, one line per method. */
export function complexityCurve({ input }: FigureInputs): string {
  const rows = loadCsv(input, ["method", "N", "seconds"]);
  const groups = groupBy(rows, (r) => r.method);
  const allX = rows.map((r) => Math.log2(num(r, "N")));
  const allY = rows.map((r) => log10Safe(num(r, "seconds"), -9));
  const f = frame(
    "Execution time vs state dimension (single thread)",
    extent(allX),
    extent(allY),
    "state dimension N",
    "seconds",
    {
      xTicks: intLogTicks(extent(allX)),
      xTickFormat: (t) => String(2 ** t),
      yTicks: intLogTicks(extent(allY)),
      yTickFormat: pow10Label,
    }
  );
  const entries: Array<[string, string]> = [];
  let i = 0;
  for (const [method, sub] of groups) {
    const color = PALETTE[i % PALETTE.length];
    const series = sub
      .map((r) => [Math.log2(num(r, "N")), log10Safe(num(r, "seconds"), -9)] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    const pts = series.map((p) => [f.x(p[0]), f.y(p[1])] as [number, number]);
    f.body.push(polyline(pts, color));
    pts.forEach((p) => f.body.push(circle(p[0], p[1], color)));
    entries.push([method, color]);
    i++;
  }
  f.body.push(...legend(entries, MARGIN.left + 12, MARGIN.top + 16));
  return svgDocument(f.body);
}

export const FIGURES: Record<string, Renderer> = {
  "memory-growth": memoryGrowth,
  "error-landscape": errorLandscape,
  "memory-latency": memoryLatency,
  sensitivity: sensitivityTrace,
  stiffness: stiffnessPanel,
  complexity: complexityCurve,
};

export function render(kind: string, inputs: FigureInputs): string {
  const renderer = FIGURES[kind];
  if (!renderer) {
    throw new SchemaError(
      `unknown figure kind "${kind}"; expected one of ${Object.keys(FIGURES).join(", ")}`
    );
  }
  return renderer(inputs);
}
