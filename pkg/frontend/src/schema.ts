// Readers for the primary outputs: frozen-schema CSV time series and JSON
// summaries. Pure pass-through: values are parsed, never recomputed.

export const CSV_HEADER =
  't,energy,denergy,dissipation_cum,charge_upsilon,charge_total,split_residual';

export const CSV_COLUMNS = CSV_HEADER.split(',');

export class SchemaError extends Error {}

export interface TimeSeries {
  t: number[];
  energy: number[];
  denergy: number[];
  dissipation_cum: number[];
  charge_upsilon: number[];
  charge_total: number[];
  split_residual: number[];
}

export function parseCsv(text: string): TimeSeries {
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  if (lines.length === 0) throw new SchemaError('empty CSV');
  const header = lines[0].trim().split(',');
  for (const col of CSV_COLUMNS) {
    if (!header.includes(col)) throw new SchemaError(`missing CSV column '${col}'`);
  }
  for (const col of header) {
    if (!CSV_COLUMNS.includes(col)) throw new SchemaError(`unknown CSV column '${col}'`);
  }
  const idx = CSV_COLUMNS.map((c) => header.indexOf(c));
  const cols: number[][] = CSV_COLUMNS.map(() => []);
  for (const line of lines.slice(1)) {
    const parts = line.split(',');
    if (parts.length !== header.length) {
      throw new SchemaError(`row has ${parts.length} fields, header has ${header.length}`);
    }
    CSV_COLUMNS.forEach((_, k) => {
      cols[k].push(Number(parts[idx[k]]));
    });
  }
  return {
    t: cols[0],
    energy: cols[1],
    denergy: cols[2],
    dissipation_cum: cols[3],
    charge_upsilon: cols[4],
    charge_total: cols[5],
    split_residual: cols[6],
  };
}

export interface Summary {
  schema_version: number;
  subcommand: string;
  config_digest: string;
  csv?: string;
  // decay fields
  omega_fit?: number | string;
  M_fit?: number | string;
  window?: number[];
  gamma_table?: { T: number; gamma: number }[];
  ratio_ED?: number | string;
  dtH_constant?: number | string;
  // observe fields
  a?: number;
  horizons?: { T: number; c_obs: number | string; lambda_min: number; observable: boolean }[];
  // split fields
  max_split_residual?: number;
  [key: string]: unknown;
}

export function parseSummary(text: string, path: string): Summary {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch (e) {
    throw new SchemaError(`${path}: not valid JSON (${(e as Error).message})`);
  }
  const s = obj as Summary;
  if (typeof s.schema_version !== 'number') {
    throw new SchemaError(`${path}: summary lacks a numeric schema_version`);
  }
  if (typeof s.subcommand !== 'string') {
    throw new SchemaError(`${path}: summary lacks a subcommand`);
  }
  if (typeof s.config_digest !== 'string') {
    throw new SchemaError(`${path}: summary lacks a config_digest`);
  }
  return s;
}

// Verbatim rendering of a primary-output value: numbers are re-serialized by
// JSON (shortest round trip), strings ("inf", "nan") pass through untouched.
export function verbatim(v: number | string | undefined): string {
  if (v === undefined) return 'n/a';
  return typeof v === 'string' ? v : JSON.stringify(v);
}
