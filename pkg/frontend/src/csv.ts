import * as fs from "fs";
import Papa from "papaparse";

export type Row = Record<string, string>;

export class SchemaError extends Error {}

/**
 * Load a CSV produced by the benchmark CLI and fail loudly when it does
 * not carry the expected frozen schema (named missing columns, or no data
 * rows at all).
 */
export function loadCsv(path: string, requiredColumns: string[]): Row[] {
  if (!fs.existsSync(path)) {
    throw new SchemaError(`input CSV does not exist: ${path}`);
  }
  const text = fs.readFileSync(path, "utf8");
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new SchemaError(`malformed CSV ${path}: ${e.message} (row ${e.row})`);
  }
  const fields = parsed.meta.fields ?? [];
  const missing = requiredColumns.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(
      `CSV ${path} is missing required column(s): ${missing.join(", ")} ` +
        `(found: ${fields.join(", ") || "none"})`
    );
  }
  if (parsed.data.length === 0) {
    throw new SchemaError(`CSV ${path} has a header but no data rows`);
  }
  return parsed.data;
}

export function num(row: Row, column: string): number {
  const v = Number(row[column]);
  if (!Number.isFinite(v)) {
    throw new SchemaError(`non-numeric value "${row[column]}" in column ${column}`);
  }
  return v;
}

export function bool(row: Row, column: string): boolean {
  const v = row[column];
  if (v !== "true" && v !== "false") {
    throw new SchemaError(`non-boolean value "${v}" in column ${column}`);
  }
  return v === "true";
}
