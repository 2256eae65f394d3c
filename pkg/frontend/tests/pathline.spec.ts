import { describe, expect, test } from 'vitest';

import { compilePathline, samplePolyline } from '../src/pathline.js';
import vectors from './fixtures/pathline_vectors.json';

interface VectorCase {
  name: string;
  particles: number[];
  vertices: number[][];
  weight: number;
  t_start: number;
  t_end: number;
  targets: { t: number; particles: number[]; positions: number[][]; weights: number }[];
}

const cases = vectors as VectorCase[];

/** Compare with ===, not Object.is: -0 and 0 are the same coordinate. */
function expectSameFloats(actual: number[], expected: number[], where: string): void {
  expect(actual.length, where).toBe(expected.length);
  for (let i = 0; i < actual.length; i++) {
    const same = actual[i] === expected[i];
    expect(same, `${where}[${i}]: ${actual[i]} !== ${expected[i]}`).toBe(true);
  }
}

describe('shared vectors: client compilation equals engine compilation', () => {
  for (const c of cases) {
    test(c.name, () => {
      const compiled = compilePathline(
        { particles: c.particles, vertices: c.vertices, weight: c.weight },
        c.t_start,
        c.t_end,
      );
      expect(compiled.length).toBe(c.targets.length);
      for (let k = 0; k < compiled.length; k++) {
        const got = compiled[k];
        const want = c.targets[k];
        expect(got.t).toBe(want.t);
        expect(got.particles).toEqual(want.particles);
        expect(got.weights).toBe(want.weights);
        expect(got.positions.length).toBe(want.positions.length);
        for (let p = 0; p < got.positions.length; p++) {
          expectSameFloats(got.positions[p], want.positions[p],
            `${c.name} target ${k} particle ${p}`);
        }
      }
    });
  }
});

describe('samplePolyline', () => {
  test('covers both endpoints at fractions 0 and 1', () => {
    const pts = samplePolyline([[0, 0], [2, 0], [2, 2]], [0, 1]);
    expect(pts[0]).toEqual([0, 0]);
    expect(pts[1]).toEqual([2, 2]);
  });

  test('fraction 0.5 of an L sits at the corner', () => {
    const pts = samplePolyline([[0, 0], [2, 0], [2, 2]], [0.5]);
    expect(pts[0]).toEqual([2, 0]);
  });

  test('zero-length polyline collapses to the first vertex', () => {
    const pts = samplePolyline([[3, 4], [3, 4]], [0, 0.5, 1]);
    for (const p of pts) expect(p).toEqual([3, 4]);
  });

  test('rejects a single vertex', () => {
    expect(() => samplePolyline([[1, 1]], [0.5])).toThrow(/2 vertices/);
  });
});

describe('compilePathline', () => {
  test('a 2-vertex pathline over 15 steps yields 15 per-step targets', () => {
    const targets = compilePathline(
      { particles: [0, 5], vertices: [[1, 1], [4, 1]] }, 0, 15,
    );
    expect(targets.length).toBe(15);
    expect(targets.map((t) => t.t)).toEqual(
      Array.from({ length: 15 }, (_, s) => s + 1),
    );
    // every selected particle shares the step's sample point
    for (const t of targets) {
      expect(t.positions.length).toBe(2);
      expect(t.positions[0]).toEqual(t.positions[1]);
    }
    expect(targets[14].positions[0]).toEqual([4, 1]);
  });

  test('rejects an empty window span', () => {
    expect(() => compilePathline({ particles: [0], vertices: [[0, 0], [1, 1]] }, 5, 5))
      .toThrow(/at least one step/);
  });
});
