/**
 * Live loss curves. Series hold the event numbers exactly as transported;
 * formatting happens only at the axis labels.
 */

import type { ProgressEvent } from './types.js';

export const TERMS = ['total', 'editing', 'force_mag', 'force_temporal', 'force_spatial', 'buffer'] as const;

export const TERM_COLORS: Record<string, string> = {
  total: '#30343a',
  editing: '#d64541',
  force_mag: '#4878cf',
  force_temporal: '#2e9e5b',
  force_spatial: '#f5a623',
  buffer: '#7d3cb5',
};

export interface LossSeries {
  term: string;
  points: { iteration: number; value: number }[];
}

export function seriesFromEvents(events: ProgressEvent[]): LossSeries[] {
  const out: LossSeries[] = [];
  for (const term of TERMS) {
    const points = [];
    for (const ev of events) {
      const value = ev[term];
      if (typeof value === 'number') {
        points.push({ iteration: ev.iteration, value });
      }
    }
    if (points.length > 0) out.push({ term, points });
  }
  return out;
}

export function drawLossChart(ctx: CanvasRenderingContext2D, events: ProgressEvent[]): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  const series = seriesFromEvents(events);
  if (series.length === 0) {
    ctx.fillStyle = '#666';
    ctx.font = '13px system-ui, sans-serif';
    ctx.textAlign = 'center';
    ctx.fillText('no progress yet', width / 2, height / 2);
    return;
  }
  const pad = 36;
  let maxIter = 1;
  let maxVal = 0;
  let minVal = Infinity;
  for (const s of series) {
    for (const p of s.points) {
      maxIter = Math.max(maxIter, p.iteration);
      if (p.value > 0) {
        maxVal = Math.max(maxVal, p.value);
        minVal = Math.min(minVal, p.value);
      }
    }
  }
  if (!(maxVal > 0)) return;
  minVal = Math.min(minVal, maxVal / 10);
  const logMin = Math.log10(minVal);
  const logMax = Math.log10(maxVal);
  const sx = (it: number) => pad + (it / maxIter) * (width - pad - 8);
  const sy = (v: number) => {
    const t = (Math.log10(Math.max(v, minVal)) - logMin) / Math.max(logMax - logMin, 1e-12);
    return height - pad - t * (height - pad - 8);
  };

  ctx.strokeStyle = '#ccc';
  ctx.lineWidth = 1;
  ctx.strokeRect(pad, 8, width - pad - 8 - pad + pad, height - pad - 8);

  for (const s of series) {
    ctx.strokeStyle = TERM_COLORS[s.term] ?? '#999';
    ctx.lineWidth = s.term === 'total' ? 2 : 1.2;
    ctx.beginPath();
    s.points.forEach((p, i) => {
      const x = sx(p.iteration);
      const y = sy(p.value);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  ctx.fillStyle = '#444';
  ctx.font = '11px system-ui, sans-serif';
  ctx.textAlign = 'left';
  let lx = pad + 6;
  for (const s of series) {
    ctx.fillStyle = TERM_COLORS[s.term] ?? '#999';
    ctx.fillText(s.term, lx, 18);
    lx += ctx.measureText(s.term).width + 14;
  }
  ctx.fillStyle = '#444';
  ctx.textAlign = 'right';
  ctx.fillText(maxVal.toExponential(1), pad - 4, 14);
  ctx.fillText(minVal.toExponential(1), pad - 4, height - pad);
  ctx.textAlign = 'center';
  ctx.fillText(`iteration 0..${maxIter}`, width / 2, height - 8);
}
