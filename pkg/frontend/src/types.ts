/**
 * Types shared across the editor: wire-level shapes of the edit-server API
 * plus the client-side draft structures they are compiled from.
 */

export interface SceneSummary {
  id: string;
  dim: number;
  steps: number;
  n_particles: number;
  domain_lo: number[];
  domain_hi: number[];
  particle_radius: number;
  has_baseline: boolean;
}

export interface BaselineMeta {
  states: number;
  start: number;
  n_particles: number;
  dim: number;
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface JobHandle {
  id: string;
  kind: 'simulate' | 'optimize' | 'search' | 'resim';
  scene: string;
  state: JobState;
  fraction: number;
  error: string | null;
  latest: ProgressEvent | null;
  result: Record<string, unknown>;
}

/** One optimizer iteration as transported; numeric fields are kept verbatim. */
export interface ProgressEvent {
  iteration: number;
  total: number;
  editing?: number;
  force_mag?: number;
  force_temporal?: number;
  force_spatial?: number;
  buffer?: number;
  [term: string]: number | undefined;
}

export interface WindowDoc {
  origin: number[];
  node_counts: number[];
  grid_spacing: number;
  buffer_thickness: number;
  t_start: number;
  t_end: number;
}

export interface KeyframeDoc {
  t: number;
  particles: number[];
  positions: number[][];
  weights?: number;
}

export interface PathlineDoc {
  particles: number[];
  vertices: number[][];
  weight?: number;
}

export interface EditDoc {
  mode: 'particle_keyframe' | 'pathline' | 'grid_density';
  keyframes?: KeyframeDoc[];
  pathlines?: PathlineDoc[];
  grid_targets?: unknown[];
}

export interface JobDocument {
  window: WindowDoc;
  edit: EditDoc;
  weights?: Record<string, number>;
  optimize?: Record<string, number>;
  search?: boolean;
}

export interface Solution {
  job_id: string;
  window: WindowDoc;
  field: { shape: number[]; data: number[] };
  converged: boolean;
  history: ProgressEvent[];
  warnings: string[];
  best_t?: number;
  evaluations?: Record<string, number>;
}

/** One decoded binary frame. Typed arrays preserve the server's exact bits. */
export interface Frame {
  count: number;
  dim: number;
  layout: string;
  x: Float64Array;
  v: Float64Array;
}
