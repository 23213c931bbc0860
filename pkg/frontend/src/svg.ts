// Minimal hand-rolled SVG plotting: enough for semilog decay traces with
// envelope overlays, horizon curves, and residual traces.

export interface Series {
  x: number[];
  y: number[];
  label: string;
  color: string;
  dashed?: boolean;
  markers?: boolean;
}

export interface PlotSpec {
  title: string;
  xlabel: string;
  ylabel: string;
  logY: boolean;
  series: Series[];
  annotations: string[]; // verbatim value lines, rendered under the legend
  width?: number;
  height?: number;
}

const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b'];

export function color(i: number): string {
  return PALETTE[i % PALETTE.length];
}

function esc(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}

export function renderPlot(spec: PlotSpec): string {
  const W = spec.width ?? 720;
  const H = spec.height ?? 420;
  const m = { left: 70, right: 20, top: 40, bottom: 48 };
  const iw = W - m.left - m.right;
  const ih = H - m.top - m.bottom;

  const finite = (v: number) => Number.isFinite(v) && (!spec.logY || v > 0);
  let xs: number[] = [];
  let ys: number[] = [];
  for (const s of spec.series) {
    for (let i = 0; i < s.x.length; i++) {
      if (Number.isFinite(s.x[i]) && finite(s.y[i])) {
        xs.push(s.x[i]);
        ys.push(spec.logY ? Math.log10(s.y[i]) : s.y[i]);
      }
    }
  }
  if (xs.length === 0) {
    xs = [0, 1];
    ys = [0, 1];
  }
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  let y0 = Math.min(...ys);
  let y1 = Math.max(...ys);
  if (x1 === x0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const px = (x: number) => m.left + ((x - x0) / (x1 - x0 || 1)) * iw;
  const py = (yv: number) => m.top + (1 - (yv - y0) / (y1 - y0)) * ih;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${W}" height="${H}" fill="white"/>`);
  parts.push(`<text x="${W / 2}" y="20" text-anchor="middle" font-size="15">${esc(spec.title)}</text>`);

  // axes and ticks
  parts.push(
    `<rect x="${m.left}" y="${m.top}" width="${iw}" height="${ih}" fill="none" stroke="#333"/>`,
  );
  const nticks = 5;
  for (let k = 0; k <= nticks; k++) {
    const xv = x0 + ((x1 - x0) * k) / nticks;
    const X = px(xv);
    parts.push(`<line x1="${X}" y1="${m.top + ih}" x2="${X}" y2="${m.top + ih + 4}" stroke="#333"/>`);
    parts.push(
      `<text x="${X}" y="${m.top + ih + 18}" text-anchor="middle">${esc(formatTick(xv))}</text>`,
    );
    const yv = y0 + ((y1 - y0) * k) / nticks;
    const Y = py(yv);
    const label = spec.logY ? `1e${formatTick(yv)}` : formatTick(yv);
    parts.push(`<line x1="${m.left - 4}" y1="${Y}" x2="${m.left}" y2="${Y}" stroke="#333"/>`);
    parts.push(`<text x="${m.left - 8}" y="${Y + 4}" text-anchor="end">${esc(label)}</text>`);
  }
  parts.push(
    `<text x="${m.left + iw / 2}" y="${H - 10}" text-anchor="middle">${esc(spec.xlabel)}</text>`,
  );
  parts.push(
    `<text x="16" y="${m.top + ih / 2}" text-anchor="middle" transform="rotate(-90 16 ${m.top + ih / 2})">${esc(spec.ylabel)}</text>`,
  );

  // series
  for (const s of spec.series) {
    const pts: string[] = [];
    for (let i = 0; i < s.x.length; i++) {
      if (!Number.isFinite(s.x[i]) || !finite(s.y[i])) continue;
      const yv = spec.logY ? Math.log10(s.y[i]) : s.y[i];
      pts.push(`${px(s.x[i]).toFixed(2)},${py(yv).toFixed(2)}`);
    }
    if (pts.length === 0) continue;
    const dash = s.dashed ? ' stroke-dasharray="6 4"' : '';
    parts.push(
      `<polyline points="${pts.join(' ')}" fill="none" stroke="${s.color}" stroke-width="1.5"${dash}/>`,
    );
    if (s.markers) {
      for (const p of pts) {
        const [cx, cy] = p.split(',');
        parts.push(`<circle cx="${cx}" cy="${cy}" r="3.5" fill="${s.color}"/>`);
      }
    }
  }

  // legend and annotations
  let ly = m.top + 14;
  for (const s of spec.series) {
    const lx = m.left + iw - 230;
    const dash = s.dashed ? ' stroke-dasharray="6 4"' : '';
    parts.push(`<line x1="${lx}" y1="${ly - 4}" x2="${lx + 24}" y2="${ly - 4}" stroke="${s.color}" stroke-width="1.5"${dash}/>`);
    parts.push(`<text x="${lx + 30}" y="${ly}" class="legend">${esc(s.label)}</text>`);
    ly += 16;
  }
  for (const a of spec.annotations) {
    parts.push(`<text x="${m.left + iw - 230}" y="${ly}" class="annotation" fill="#444">${esc(a)}</text>`);
    ly += 16;
  }
  parts.push('</svg>');
  return parts.join('\n');
}

function formatTick(v: number): string {
  if (v === 0) return '0';
  const a = Math.abs(v);
  if (a >= 1000 || a < 0.01) return v.toExponential(1);
  return String(Math.round(v * 100) / 100);
}
