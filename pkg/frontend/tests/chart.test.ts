import { describe, expect, it } from 'vitest';

import { barChartSvg, deltaRowHtml, lineChartSvg } from '../src/chart';

describe('line chart', () => {
  it('renders one path per segment with all points', () => {
    const svg = lineChartSvg([
      {
        name: 'glucose',
        color: '#123456',
        segments: [
          { values: [1, 2, 3, 4], kind: 'observed' },
          { values: [5, 6], kind: 'generated' },
        ],
      },
    ]);
    const paths = svg.match(/<path /g) ?? [];
    expect(paths).toHaveLength(2);
    // observed path has 4 points: one M and three L commands
    const observed = svg.match(/d="([^"]+)"/)?.[1] ?? '';
    expect(observed.split('L')).toHaveLength(4);
  });

  it('styles generated segments distinctly from observed ones', () => {
    const svg = lineChartSvg([
      {
        name: 'x',
        color: '#000',
        segments: [
          { values: [1, 2], kind: 'observed' },
          { values: [3], kind: 'generated' },
        ],
      },
    ]);
    expect(svg).toContain('class="series-x observed"');
    expect(svg).toContain('class="series-x generated"');
    const generated = svg.slice(svg.indexOf('generated'));
    expect(generated).toContain('stroke-dasharray');
    expect(svg.slice(0, svg.indexOf('generated'))).not.toContain('stroke-dasharray');
  });

  it('handles empty input', () => {
    expect(lineChartSvg([])).toContain('<svg');
  });
});

describe('bar chart', () => {
  it('renders one bar and whisker per group with verbatim means', () => {
    const svg = barChartSvg([
      { label: 'healthy', mean: 0.8123456, low: 0.7, high: 0.9 },
      { label: 't1d', mean: 0.3, low: 0.1, high: 0.5 },
    ]);
    expect(svg.match(/<rect class="bar"/g)).toHaveLength(2);
    expect(svg.match(/<line class="whisker"/g)).toHaveLength(2);
    expect(svg).toContain('data-mean="0.8123456"');
    expect(svg).toContain('data-label="healthy"');
  });
});

describe('delta rows', () => {
  it('marks ratio 1.0 as neutral and everything else as changed', () => {
    const row = deltaRowHtml(['a', 'b'], [1.0, 2.0]);
    expect(row).toContain('class="delta neutral" data-variable="a"');
    expect(row).toContain('class="delta changed" data-variable="b"');
  });

  it('prints service numbers without rounding games', () => {
    const row = deltaRowHtml(['a'], [1.234567]);
    expect(row).toContain('1.23457'); // toPrecision(6)
  });
});
