/**
 * Editor session: the draft state a user builds up on the canvas (window
 * rectangle, pathline, keyframes, particle selection, parameter form) and
 * the submit flow that compiles it into a job document, runs it on the
 * server, and swaps playback to the controlled result.
 */

import type { EditClient } from './api.js';
import { ApiError } from './api.js';
import { compilePathline } from './pathline.js';
import type {
  Frame,
  JobDocument,
  JobHandle,
  KeyframeDoc,
  ProgressEvent,
  SceneSummary,
  Solution,
} from './types.js';

export type OverlayMode = 'original' | 'controlled' | 'both';

export interface DraftWindow {
  lo: [number, number];
  hi: [number, number];
  tStart: number;
  tEnd: number;
}

export interface DraftPathline {
  particles: number[];
  vertices: number[][];
  /** Authoring time per vertex (the frame the user was parked on). */
  times: number[];
  weight: number;
}

export interface DraftKeyframe {
  t: number;
  particles: number[];
  positions: number[][];
}

export interface ParamForm {
  gridSpacing: number;
  bufferThickness: number;
  kE: number;
  kF: number;
  kT: number;
  kS: number;
  kB: number;
  maxIters: number;
  searchWindow: boolean;
}

export interface SubmitOutcome {
  edit: JobHandle;
  solution: Solution;
  resim: JobHandle;
}

export class EditorSession {
  readonly scene: SceneSummary;
  frame = 0;
  overlay: OverlayMode = 'original';
  window: DraftWindow | null = null;
  pathline: DraftPathline | null = null;
  keyframes: DraftKeyframe[] = [];
  selected: number[] = [];
  params: ParamForm;
  /** Loss curves exactly as transported, keyed by the job that produced them. */
  events: ProgressEvent[] = [];
  /** Validation messages from the last rejected submit, keyed by field path. */
  formErrors: Map<string, string> = new Map();
  /** Decoded frames per source ("baseline" or a resim job id). */
  frames: Map<string, Frame[]> = new Map();
  controlledSource: string | null = null;

  constructor(scene: SceneSummary) {
    this.scene = scene;
    this.params = {
      gridSpacing: 3 * scene.particle_radius,
      bufferThickness: 2.0,
      kE: 1.0,
      kF: 1e-3,
      kT: 1e-2,
      kS: 1e-2,
      kB: 10.0,
      maxIters: 60,
      searchWindow: false,
    };
  }

  /**
   * Set the draft window from a drawn rectangle, clamped to the domain so
   * the draft always satisfies the in-domain invariant. Degenerate
   * rectangles are rejected.
   */
  setWindow(a: [number, number], b: [number, number], tStart: number, tEnd: number): void {
    const lo: [number, number] = [Math.min(a[0], b[0]), Math.min(a[1], b[1])];
    const hi: [number, number] = [Math.max(a[0], b[0]), Math.max(a[1], b[1])];
    for (let d = 0; d < 2; d++) {
      lo[d] = Math.max(lo[d], this.scene.domain_lo[d]);
      hi[d] = Math.min(hi[d], this.scene.domain_hi[d]);
    }
    if (!(lo[0] < hi[0] && lo[1] < hi[1])) {
      throw new Error('window rectangle is empty after clamping to the domain');
    }
    if (!(Number.isInteger(tStart) && Number.isInteger(tEnd) && tStart < tEnd)) {
      throw new Error('window needs integer steps with t_start < t_end');
    }
    this.window = { lo, hi, tStart, tEnd };
  }

  /** Append a pathline vertex; per-vertex times must not decrease. */
  addPathlineVertex(point: [number, number], time: number): void {
    if (!this.pathline) {
      if (this.selected.length === 0) {
        throw new Error('select particles before drawing their pathline');
      }
      this.pathline = {
        particles: this.selected.slice(),
        vertices: [],
        times: [],
        weight: 1.0,
      };
    }
    const times = this.pathline.times;
    if (times.length > 0 && time < times[times.length - 1]) {
      throw new Error(
        `pathline times must be monotone; got ${time} after ${times[times.length - 1]}`,
      );
    }
    this.pathline.vertices.push([point[0], point[1]]);
    this.pathline.times.push(time);
  }

  clearDrafts(): void {
    this.pathline = null;
    this.keyframes = [];
    this.formErrors.clear();
  }

  hasTargets(): boolean {
    return (this.pathline !== null && this.pathline.vertices.length >= 2)
      || this.keyframes.length > 0;
  }

  canSubmit(): boolean {
    return this.window !== null && this.hasTargets();
  }

  submitHint(): string | null {
    if (this.window === null) return 'draw a window rectangle first';
    if (!this.hasTargets()) return 'draw a pathline (2+ vertices) or add a keyframe';
    return null;
  }

  /** World rectangle -> node grid: origin at lo, counts rounded to span it. */
  windowDoc(): JobDocument['window'] {
    if (!this.window) throw new Error('no draft window');
    const { lo, hi, tStart, tEnd } = this.window;
    const spacing = this.params.gridSpacing;
    const counts = [0, 1].map((d) =>
      Math.max(2, Math.round((hi[d] - lo[d]) / spacing) + 1),
    );
    return {
      origin: [lo[0], lo[1]],
      node_counts: counts,
      grid_spacing: spacing,
      buffer_thickness: this.params.bufferThickness,
      t_start: tStart,
      t_end: tEnd,
    };
  }

  buildJobDocument(): JobDocument {
    if (!this.canSubmit()) {
      throw new Error(this.submitHint() ?? 'incomplete edit');
    }
    const doc: JobDocument = {
      window: this.windowDoc(),
      edit: this.pathline
        ? {
            mode: 'pathline',
            pathlines: [{
              particles: this.pathline.particles.slice(),
              vertices: this.pathline.vertices.map((v) => v.slice()),
              weight: this.pathline.weight,
            }],
          }
        : {
            mode: 'particle_keyframe',
            keyframes: this.keyframes.map((k) => ({
              t: k.t,
              particles: k.particles.slice(),
              positions: k.positions.map((p) => p.slice()),
            })),
          },
      weights: {
        k_e: this.params.kE,
        k_f: this.params.kF,
        k_t: this.params.kT,
        k_s: this.params.kS,
        k_b: this.params.kB,
      },
      optimize: { max_lbfgs_iters: this.params.maxIters },
    };
    if (this.params.searchWindow) doc.search = true;
    return doc;
  }

  /**
   * The per-step targets this edit asks for, compiled client-side. For a
   * pathline draft these are equal, float for float, to the expansion the
   * server solves against.
   */
  clientTargets(): KeyframeDoc[] {
    if (this.pathline && this.window) {
      return compilePathline(
        {
          particles: this.pathline.particles,
          vertices: this.pathline.vertices,
          weight: this.pathline.weight,
        },
        this.window.tStart,
        this.window.tEnd,
      );
    }
    return this.keyframes.map((k) => ({
      t: k.t,
      particles: k.particles.slice(),
      positions: k.positions.map((p) => p.slice()),
    }));
  }

  /**
   * Submit the drafted edit: post the job, follow its progress into
   * `events`, fetch the solution, re-simulate, cache the controlled frames,
   * and switch the overlay to "both". Server-side validation failures land
   * in `formErrors` keyed by field path and are re-thrown.
   */
  async submitEdit(client: EditClient): Promise<SubmitOutcome> {
    const doc = this.buildJobDocument();
    this.formErrors.clear();
    this.events = [];
    let edit: JobHandle;
    try {
      edit = await client.submitEdit(this.scene.id, doc);
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        for (const message of err.errors) {
          const m = /^([A-Za-z0-9_.\[\]]+): (.*)$/.exec(message);
          if (m) this.formErrors.set(m[1], m[2]);
          else this.formErrors.set('', message);
        }
      }
      throw err;
    }
    const finished = await client.followJob(edit.id, (ev) => this.events.push(ev));
    if (finished.state !== 'done') {
      throw new ApiError(0, [`edit job ${edit.id} failed: ${finished.error ?? 'unknown'}`]);
    }
    const solution = await client.solution(edit.id);
    const resim = await client.waitForJob(
      (await client.submitResim(this.scene.id, [edit.id])).id,
    );
    if (resim.state !== 'done') {
      throw new ApiError(0, [`resim job ${resim.id} failed: ${resim.error ?? 'unknown'}`]);
    }
    const { frames } = await client.fetchFrames(this.scene.id, { source: resim.id });
    this.frames.set(resim.id, frames);
    this.controlledSource = resim.id;
    this.overlay = 'both';
    return { edit: finished, solution, resim };
  }

  /** Fetch and cache baseline frames for playback. */
  async loadBaseline(client: EditClient): Promise<Frame[]> {
    const { frames } = await client.fetchFrames(this.scene.id);
    this.frames.set('baseline', frames);
    return frames;
  }

  frameAt(source: string, index: number): Frame | null {
    const cached = this.frames.get(source);
    if (!cached || index < 0 || index >= cached.length) return null;
    return cached[index];
  }
}
