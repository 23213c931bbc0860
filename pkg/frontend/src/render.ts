// Figure generation from experiment bundles. Every number that appears in
// an annotation or legend is echoed verbatim from the primary outputs; the
// only computed quantities are pixel coordinates (and the envelope curve,
// whose defining constants are annotated verbatim next to it).

import * as fs from 'node:fs';
import * as path from 'node:path';

import { CSV_COLUMNS, SchemaError, Summary, TimeSeries, parseCsv, parseSummary, verbatim } from './schema.js';
import { PlotSpec, color, renderPlot } from './svg.js';

export interface BundleEntry {
  digest: string;
  subcommand: string;
  summary: Summary;
  summaryPath: string;
  csvPath?: string;
  series?: TimeSeries;
}

export interface ReportBundle {
  entries: BundleEntry[];
  schemaVersion: number;
}

export function loadBundle(dir: string): ReportBundle {
  const files = fs
    .readdirSync(dir)
    .filter((f) => f.endsWith('.summary.json'))
    .sort();
  if (files.length === 0) {
    throw new SchemaError(`no *.summary.json files in ${dir}`);
  }
  const entries: BundleEntry[] = [];
  let schemaVersion: number | null = null;
  for (const f of files) {
    const p = path.join(dir, f);
    const summary = parseSummary(fs.readFileSync(p, 'utf-8'), p);
    if (schemaVersion === null) schemaVersion = summary.schema_version;
    if (summary.schema_version !== schemaVersion) {
      throw new SchemaError(
        `mixed schema versions: ${f} has ${summary.schema_version}, expected ${schemaVersion}`,
      );
    }
    const entry: BundleEntry = {
      digest: summary.config_digest,
      subcommand: summary.subcommand,
      summary,
      summaryPath: p,
    };
    if (typeof summary.csv === 'string') {
      entry.csvPath = path.join(dir, summary.csv);
      entry.series = parseCsv(fs.readFileSync(entry.csvPath, 'utf-8'));
    }
    entries.push(entry);
  }
  return { entries, schemaVersion: schemaVersion ?? 0 };
}

function envelopeCurve(ts: number[], E0: number, M: number, omega: number): number[] {
  return ts.map((t) => M * Math.exp(-2 * omega * t) * E0);
}

export interface Figure {
  name: string;
  svg: string;
  caption: string;
  digests: string[];
}

export function decayFigure(entries: BundleEntry[]): Figure | null {
  const withSeries = entries.filter(
    (e) => e.series && (e.subcommand === 'decay' || e.subcommand === 'simulate'),
  );
  if (withSeries.length === 0) return null;
  const spec: PlotSpec = {
    title: 'Energy decay with fitted envelope',
    xlabel: 't',
    ylabel: 'energy',
    logY: true,
    series: [],
    annotations: [],
  };
  withSeries.forEach((e, i) => {
    const s = e.series!;
    spec.series.push({ x: s.t, y: s.energy, label: `energy  [${e.digest}]`, color: color(i) });
    const omega = e.summary.omega_fit;
    const M = e.summary.M_fit;
    if (typeof omega === 'number' && typeof M === 'number' && s.energy.length > 0) {
      spec.series.push({
        x: s.t,
        y: envelopeCurve(s.t, s.energy[0], M, omega),
        label: `envelope [${e.digest}]`,
        color: color(i),
        dashed: true,
      });
    }
    spec.annotations.push(`omega_fit = ${verbatim(omega)}  [${e.digest}]`);
    if (M !== undefined) spec.annotations.push(`M_fit = ${verbatim(M)}  [${e.digest}]`);
  });
  return {
    name: 'decay.svg',
    svg: renderPlot(spec),
    caption: 'Semilog energy traces; dashed: M_fit e^{-2 omega_fit t} E(0).',
    digests: withSeries.map((e) => e.digest),
  };
}

export function observabilityFigure(entries: BundleEntry[]): Figure | null {
  const obs = entries.filter((e) => e.subcommand === 'observe' && Array.isArray(e.summary.horizons));
  if (obs.length === 0) return null;
  const spec: PlotSpec = {
    title: 'Observability constant vs horizon',
    xlabel: 'T',
    ylabel: 'c_obs',
    logY: false,
    series: [],
    annotations: [],
  };
  obs.forEach((e, i) => {
    const hs = e.summary.horizons!;
    const finite = hs.filter((h) => typeof h.c_obs === 'number');
    spec.series.push({
      x: finite.map((h) => h.T),
      y: finite.map((h) => h.c_obs as number),
      label: `c_obs  [${e.digest}]`,
      color: color(i),
      markers: true,
    });
    for (const h of hs) {
      spec.annotations.push(`c_obs(T = ${verbatim(h.T)}) = ${verbatim(h.c_obs)}`);
    }
  });
  return {
    name: 'observability.svg',
    svg: renderPlot(spec),
    caption: 'Estimated observability constants over the configured horizons.',
    digests: obs.map((e) => e.digest),
  };
}

export function residualFigure(entries: BundleEntry[]): Figure | null {
  const splits = entries.filter((e) => e.subcommand === 'split' && e.series);
  if (splits.length === 0) return null;
  const spec: PlotSpec = {
    title: 'Splitting reconstruction residual',
    xlabel: 't',
    ylabel: 'residual',
    logY: true,
    series: [],
    annotations: [],
  };
  splits.forEach((e, i) => {
    const s = e.series!;
    spec.series.push({
      x: s.t,
      y: s.split_residual,
      label: `residual [${e.digest}]`,
      color: color(i),
    });
    spec.annotations.push(`max_split_residual = ${verbatim(e.summary.max_split_residual as number)}`);
  });
  return {
    name: 'residuals.svg',
    svg: renderPlot(spec),
    caption: 'Relative reconstruction residual of the trajectory splitting.',
    digests: splits.map((e) => e.digest),
  };
}

export function gammaTable(entries: BundleEntry[]): string | null {
  const rows: string[] = [];
  for (const e of entries) {
    if (!Array.isArray(e.summary.gamma_table)) continue;
    for (const g of e.summary.gamma_table) {
      rows.push(
        `<tr><td>${e.digest}</td><td>${verbatim(g.T)}</td><td>${verbatim(g.gamma)}</td></tr>`,
      );
    }
  }
  if (rows.length === 0) return null;
  return [
    '<table border="1" cellpadding="4" cellspacing="0">',
    '<tr><th>config</th><th>T</th><th>gamma</th></tr>',
    ...rows,
    '</table>',
  ].join('\n');
}

export function renderReport(inDir: string, outDir: string): string[] {
  const bundle = loadBundle(inDir);
  fs.mkdirSync(outDir, { recursive: true });
  const figures = [
    decayFigure(bundle.entries),
    observabilityFigure(bundle.entries),
    residualFigure(bundle.entries),
  ].filter((f): f is Figure => f !== null);
  if (figures.length === 0) {
    throw new SchemaError('bundle contains no renderable experiments');
  }
  const written: string[] = [];
  const sections: string[] = [];
  for (const fig of figures) {
    const p = path.join(outDir, fig.name);
    fs.writeFileSync(p, fig.svg);
    written.push(p);
    sections.push(
      `<section><h2>${fig.name}</h2><p>${fig.caption}</p>` +
        `<p>configs: ${fig.digests.map((d) => `<code>${d}</code>`).join(', ')}</p>` +
        `<object data="${fig.name}" type="image/svg+xml" width="740"></object></section>`,
    );
  }
  const table = gammaTable(bundle.entries);
  if (table) {
    sections.push(`<section><h2>Contraction factors</h2>${table}</section>`);
  }
  const html = [
    '<!doctype html>',
    '<html lang="en"><head><meta charset="utf-8"><title>maxdamp report</title></head>',
    '<body>',
    '<h1>maxdamp report</h1>',
    `<p>schema version ${bundle.schemaVersion}; ${bundle.entries.length} experiment summaries.</p>`,
    ...sections,
    '</body></html>',
  ].join('\n');
  const index = path.join(outDir, 'index.html');
  fs.writeFileSync(index, html);
  written.push(index);
  return written;
}
