/**
 * Client-side pathline compilation.
 *
 * This mirrors the server's expansion of a polyline into per-step particle
 * targets exactly, operation for operation, so the targets computed here for
 * preview and validation are equal (every float64 bit) to what the server
 * solves against. Do not "improve" the arithmetic: the order of the
 * subtract/multiply/add chain is part of the contract, and the shared test
 * vectors in tests/fixtures/pathline_vectors.json pin it.
 */

import type { KeyframeDoc, PathlineDoc } from './types.js';

/** Index of the first element of `sorted` strictly greater than `x`. */
function upperBound(sorted: number[], x: number): number {
  let i = 0;
  while (i < sorted.length && sorted[i] <= x) i++;
  return i;
}

/**
 * Arc-length point sampling of a polyline at the given fractions in [0, 1].
 * A zero-length polyline collapses every sample onto its first vertex.
 */
export function samplePolyline(vertices: number[][], fractions: number[]): number[][] {
  if (vertices.length < 2) {
    throw new Error('polyline needs at least 2 vertices');
  }
  const nseg = vertices.length - 1;
  const dim = vertices[0].length;
  const segLen: number[] = [];
  const cum: number[] = [0];
  for (let k = 0; k < nseg; k++) {
    let sq = 0;
    for (let d = 0; d < dim; d++) {
      const dv = vertices[k + 1][d] - vertices[k][d];
      sq += dv * dv;
    }
    const len = Math.sqrt(sq);
    segLen.push(len);
    cum.push(cum[k] + len);
  }
  const total = cum[nseg];
  if (total === 0) {
    return fractions.map(() => vertices[0].slice());
  }
  return fractions.map((f) => {
    const s = f * total;
    let k = upperBound(cum, s) - 1;
    k = Math.min(Math.max(k, 0), nseg - 1);
    const denom = segLen[k] > 0 ? segLen[k] : 1;
    const local = (s - cum[k]) / denom;
    const point: number[] = [];
    for (let d = 0; d < dim; d++) {
      point.push(vertices[k][d] + local * (vertices[k + 1][d] - vertices[k][d]));
    }
    return point;
  });
}

/**
 * Expand one pathline into per-step keyframes over a window of T steps:
 * the curve is sampled at fractions s/T for s = 1..T, the sample for step s
 * targets state tStart + s, and every selected particle shares that sample
 * point (the cluster is steered as a unit, not teleported apart).
 */
export function compilePathline(
  pathline: PathlineDoc,
  tStart: number,
  tEnd: number,
): KeyframeDoc[] {
  const T = tEnd - tStart;
  if (T < 1) {
    throw new Error('window must span at least one step');
  }
  const fractions: number[] = [];
  for (let s = 1; s <= T; s++) fractions.push(s / T);
  const points = samplePolyline(pathline.vertices, fractions);
  const weights = pathline.weight ?? 1.0;
  return points.map((point, s) => ({
    t: tStart + 1 + s,
    particles: pathline.particles.slice(),
    positions: pathline.particles.map(() => point.slice()),
    weights,
  }));
}
