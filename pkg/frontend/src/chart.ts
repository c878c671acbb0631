/**
 * Pure SVG builders for the explorer. Each function maps the numbers it
 * is given straight to screen coordinates; no smoothing, no rescaling of
 * values beyond the axis transform.
 */

export interface Segment {
  /** consecutive y-values; x positions are the running step index */
  values: number[];
  /** style class: observed history vs generated future */
  kind: 'observed' | 'generated';
}

export interface SeriesSpec {
  name: string;
  color: string;
  segments: Segment[];
}

export interface BarSpec {
  label: string;
  mean: number;
  /** whisker extent, e.g. min/max or +-1 sd of the member scores */
  low: number;
  high: number;
}

const WIDTH = 720;
const HEIGHT = 280;
const PAD = 36;

function scale(value: number, lo: number, hi: number, a: number, b: number): number {
  if (hi === lo) {
    return (a + b) / 2;
  }
  return a + ((value - lo) / (hi - lo)) * (b - a);
}

function esc(text: string): string {
  return text.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

/** Multi-variable line chart; generated segments are dashed. */
export function lineChartSvg(series: SeriesSpec[]): string {
  const all: number[] = [];
  let maxLen = 0;
  for (const s of series) {
    let len = 0;
    for (const seg of s.segments) {
      all.push(...seg.values);
      len += seg.values.length;
    }
    maxLen = Math.max(maxLen, len);
  }
  if (all.length === 0) {
    return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="line-chart"></svg>`;
  }
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const parts: string[] = [];
  for (const s of series) {
    let offset = 0;
    let previous: { x: number; y: number } | null = null;
    for (const seg of s.segments) {
      const points = seg.values.map((v, k) => ({
        x: scale(offset + k, 0, Math.max(maxLen - 1, 1), PAD, WIDTH - PAD),
        y: scale(v, lo, hi, HEIGHT - PAD, PAD),
      }));
      const chain = previous ? [previous, ...points] : points;
      const path = chain.map((p, k) => `${k === 0 ? 'M' : 'L'}${p.x.toFixed(1)},${p.y.toFixed(1)}`).join(' ');
      const dash = seg.kind === 'generated' ? ' stroke-dasharray="6 4"' : '';
      parts.push(
        `<path class="series-${esc(s.name)} ${seg.kind}" d="${path}" fill="none" ` +
        `stroke="${s.color}" stroke-width="1.6"${dash}/>`,
      );
      offset += seg.values.length;
      previous = points.length > 0 ? points[points.length - 1] : previous;
    }
  }
  return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="line-chart">${parts.join('')}</svg>`;
}

/** Grouped bars with whiskers (cohort similarity panel). */
export function barChartSvg(bars: BarSpec[]): string {
  if (bars.length === 0) {
    return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="bar-chart"></svg>`;
  }
  const values = bars.flatMap(b => [b.mean, b.low, b.high, 0, 1]);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const slot = (WIDTH - 2 * PAD) / bars.length;
  const parts: string[] = [];
  bars.forEach((bar, i) => {
    const x = PAD + i * slot + slot * 0.2;
    const w = slot * 0.6;
    const y0 = scale(0, lo, hi, HEIGHT - PAD, PAD);
    const y1 = scale(bar.mean, lo, hi, HEIGHT - PAD, PAD);
    const top = Math.min(y0, y1);
    const height = Math.abs(y0 - y1);
    const cx = x + w / 2;
    const yLow = scale(bar.low, lo, hi, HEIGHT - PAD, PAD);
    const yHigh = scale(bar.high, lo, hi, HEIGHT - PAD, PAD);
    parts.push(
      `<rect class="bar" data-label="${esc(bar.label)}" data-mean="${bar.mean}" ` +
      `x="${x.toFixed(1)}" y="${top.toFixed(1)}" width="${w.toFixed(1)}" ` +
      `height="${height.toFixed(1)}"/>`,
      `<line class="whisker" x1="${cx.toFixed(1)}" y1="${yLow.toFixed(1)}" ` +
      `x2="${cx.toFixed(1)}" y2="${yHigh.toFixed(1)}" stroke="currentColor"/>`,
      `<text class="bar-label" x="${cx.toFixed(1)}" y="${(HEIGHT - 10).toFixed(1)}" ` +
      `text-anchor="middle">${esc(bar.label)}</text>`,
    );
  });
  return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="bar-chart">${parts.join('')}</svg>`;
}

/** Delta-ratio bars for one step (reference over generated; 1 = no change). */
export function deltaRowHtml(variables: string[], deltas: number[]): string {
  const cells = variables.map((name, k) => {
    const value = deltas[k];
    const cls = Math.abs(value - 1.0) < 1e-9 ? 'delta neutral' : 'delta changed';
    return `<td class="${cls}" data-variable="${esc(name)}">${value.toPrecision(6)}</td>`;
  });
  return `<tr>${cells.join('')}</tr>`;
}
