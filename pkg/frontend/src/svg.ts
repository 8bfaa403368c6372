/**
 * Deterministic SVG scaffolding: fixed styles, fixed-precision coordinate
 * formatting, no timestamps or randomness anywhere, so re-rendering the
 * same CSV yields byte-identical output.
 */

export const WIDTH = 680;
export const HEIGHT = 440;
export const MARGIN = { top: 42, right: 24, bottom: 52, left: 78 };
export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const FONT = "font-family=\"Helvetica, Arial, sans-serif\"";

export function fmt(x: number): string {
  if (!Number.isFinite(x)) throw new Error(`non-finite coordinate: ${x}`);
  const s = x.toFixed(2);
  return s === "-0.00" ? "0.00" : s;
}

export interface Scale {
  (x: number): number;
  domain: [number, number];
}

export function scale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 === 0 ? 1 : d1 - d0;
  const f = ((x: number) => r0 + ((x - d0) / span) * (r1 - r0)) as Scale;
  f.domain = domain;
  return f;
}

export function extent(values: number[], pad = 0.05): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo)) throw new Error("extent of empty or non-finite data");
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const p = (hi - lo) * pad;
  return [lo - p, hi + p];
}

export function ticks(domain: [number, number], count = 6): number[] {
  const [lo, hi] = domain;
  const rawStep = (hi - lo) / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => (hi - lo) / s <= count)!;
  const first = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let t = first; t <= hi + 1e-9; t += step) out.push(Math.abs(t) < step / 1e6 ? 0 : t);
  return out;
}

export function tickLabel(t: number): string {
  if (t !== 0 && (Math.abs(t) >= 1e5 || Math.abs(t) < 1e-3)) {
    return t.toExponential(0).replace("+", "");
  }
  const s = String(Math.round(t * 1e6) / 1e6);
  return s;
}

export function pow10Label(exp: number): string {
  return `1e${exp}`;
}

export interface Frame {
  body: string[];
  x: Scale;
  y: Scale;
}

/** Plot frame: background, title, axis lines, ticks, labels. */
export interface FrameOpts {
  xTickFormat?: (t: number) => string;
  yTickFormat?: (t: number) => string;
  xTicks?: number[];
  yTicks?: number[];
}

export function frame(
  title: string,
  xDomain: [number, number],
  yDomain: [number, number],
  xLabel: string,
  yLabel: string,
  opts: FrameOpts = {}
): Frame {
  const x = scale(xDomain, [MARGIN.left, WIDTH - MARGIN.right]);
  const y = scale(yDomain, [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const xf = opts.xTickFormat ?? tickLabel;
  const yf = opts.yTickFormat ?? tickLabel;
  const body: string[] = [];
  body.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`);
  body.push(
    `<text x="${fmt(WIDTH / 2)}" y="24" text-anchor="middle" ${FONT} ` +
      `font-size="15" font-weight="bold">${title}</text>`
  );
  for (const t of opts.xTicks ?? ticks(xDomain)) {
    const px = fmt(x(t));
    body.push(
      `<line x1="${px}" y1="${fmt(y(yDomain[0]))}" x2="${px}" y2="${fmt(y(yDomain[1]))}" ` +
        `stroke="#dddddd" stroke-width="1"/>`
    );
    body.push(
      `<text x="${px}" y="${fmt(HEIGHT - MARGIN.bottom + 18)}" text-anchor="middle" ` +
        `${FONT} font-size="11">${xf(t)}</text>`
    );
  }
  for (const t of opts.yTicks ?? ticks(yDomain)) {
    const py = fmt(y(t));
    body.push(
      `<line x1="${fmt(x(xDomain[0]))}" y1="${py}" x2="${fmt(x(xDomain[1]))}" y2="${py}" ` +
        `stroke="#dddddd" stroke-width="1"/>`
    );
    body.push(
      `<text x="${fmt(MARGIN.left - 8)}" y="${fmt(y(t) + 4)}" text-anchor="end" ` +
        `${FONT} font-size="11">${yf(t)}</text>`
    );
  }
  body.push(
    `<rect x="${fmt(MARGIN.left)}" y="${fmt(MARGIN.top)}" ` +
      `width="${fmt(WIDTH - MARGIN.left - MARGIN.right)}" ` +
      `height="${fmt(HEIGHT - MARGIN.top - MARGIN.bottom)}" ` +
      `fill="none" stroke="#333333" stroke-width="1"/>`
  );
  body.push(
    `<text x="${fmt(WIDTH / 2)}" y="${fmt(HEIGHT - 14)}" text-anchor="middle" ` +
      `${FONT} font-size="12">${xLabel}</text>`
  );
  body.push(
    `<text x="20" y="${fmt(HEIGHT / 2)}" text-anchor="middle" ${FONT} font-size="12" ` +
      `transform="rotate(-90 20 ${fmt(HEIGHT / 2)})">${yLabel}</text>`
  );
  return { body, x, y };
}

export function polyline(points: Array<[number, number]>, color: string, dash = ""): string {
  const attr = dash ? ` stroke-dasharray="${dash}"` : "";
  const pts = points.map(([px, py]) => `${fmt(px)},${fmt(py)}`).join(" ");
  return `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="2"${attr}/>`;
}

export function circle(px: number, py: number, color: string, r = 3.5, filled = true): string {
  const fill = filled ? color : "#ffffff";
  return (
    `<circle cx="${fmt(px)}" cy="${fmt(py)}" r="${r}" fill="${fill}" ` +
    `stroke="${color}" stroke-width="1.5"/>`
  );
}

export function legend(entries: Array<[string, string]>, x0: number, y0: number): string[] {
  const out: string[] = [];
  entries.forEach(([label, color], i) => {
    const y = y0 + i * 18;
    out.push(
      `<line x1="${fmt(x0)}" y1="${fmt(y)}" x2="${fmt(x0 + 22)}" y2="${fmt(y)}" ` +
        `stroke="${color}" stroke-width="3"/>`
    );
    out.push(
      `<text x="${fmt(x0 + 28)}" y="${fmt(y + 4)}" ${FONT} font-size="11">${label}</text>`
    );
  });
  return out;
}

export function document(body: string[]): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}">\n` +
    body.join("\n") +
    "\n</svg>\n"
  );
}
