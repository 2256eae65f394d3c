/**
 * Typed client for the edit-server HTTP API. This is the editor's only
 * doorway to the engine: no file access, no engine imports.
 */

import { decodeFrames } from './frames.js';
import type {
  BaselineMeta,
  Frame,
  JobDocument,
  JobHandle,
  ProgressEvent,
  SceneSummary,
  Solution,
} from './types.js';

export class ApiError extends Error {
  readonly status: number;
  readonly errors: string[];

  constructor(status: number, errors: string[]) {
    super(errors.join('; ') || `HTTP ${status}`);
    this.status = status;
    this.errors = errors;
  }
}

async function raise(resp: Response): Promise<never> {
  let errors: string[] = [];
  try {
    const body = await resp.json();
    const detail = body?.detail ?? body;
    if (Array.isArray(detail?.errors)) errors = detail.errors.map(String);
    else if (typeof detail === 'string') errors = [detail];
  } catch {
    // non-JSON error body; keep the status-only message
  }
  throw new ApiError(resp.status, errors);
}

export interface FrameRange {
  start?: number;
  stop?: number;
  decimate?: number;
  source?: string;
}

export interface EventBatch {
  events: ProgressEvent[];
  next: number;
  done: boolean;
}

export class EditClient {
  readonly base: string;

  constructor(base: string) {
    this.base = base.replace(/\/+$/, '');
  }

  private async json<T>(method: string, path: string, payload?: unknown): Promise<T> {
    const resp = await fetch(this.base + path, {
      method,
      headers: payload === undefined ? undefined : { 'Content-Type': 'application/json' },
      body: payload === undefined ? undefined : JSON.stringify(payload),
    });
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as T;
  }

  async createScene(config: string): Promise<SceneSummary> {
    return this.json('POST', '/api/scenes', { config });
  }

  async listScenes(): Promise<SceneSummary[]> {
    const body = await this.json<{ scenes: SceneSummary[] }>('GET', '/api/scenes');
    return body.scenes;
  }

  async getScene(id: string): Promise<SceneSummary & { config: string }> {
    return this.json('GET', `/api/scenes/${id}`);
  }

  async runBaseline(id: string): Promise<JobHandle> {
    return this.json('POST', `/api/scenes/${id}/baseline`);
  }

  async baselineMeta(id: string): Promise<BaselineMeta> {
    return this.json('GET', `/api/scenes/${id}/baseline`);
  }

  async submitEdit(id: string, doc: JobDocument): Promise<JobHandle> {
    return this.json('POST', `/api/scenes/${id}/edits`, doc);
  }

  async submitResim(id: string, solutionJobs: string[]): Promise<JobHandle> {
    return this.json('POST', `/api/scenes/${id}/resim`, { solutions: solutionJobs });
  }

  async job(id: string): Promise<JobHandle> {
    return this.json('GET', `/api/jobs/${id}`);
  }

  async jobs(scene?: string): Promise<JobHandle[]> {
    const q = scene ? `?scene=${encodeURIComponent(scene)}` : '';
    const body = await this.json<{ jobs: JobHandle[] }>('GET', `/api/jobs${q}`);
    return body.jobs;
  }

  async events(id: string, since = 0): Promise<EventBatch> {
    return this.json('GET', `/api/jobs/${id}/events?since=${since}`);
  }

  async solution(id: string): Promise<Solution> {
    return this.json('GET', `/api/jobs/${id}/solution`);
  }

  /**
   * Fetch a frame range as raw bytes plus decoded frames. The raw buffer is
   * returned too so callers can verify or cache without re-fetching.
   */
  async fetchFrames(
    id: string,
    range: FrameRange = {},
  ): Promise<{ frames: Frame[]; raw: ArrayBuffer }> {
    const params = new URLSearchParams();
    if (range.start !== undefined) params.set('start', String(range.start));
    if (range.stop !== undefined) params.set('stop', String(range.stop));
    if (range.decimate !== undefined) params.set('decimate', String(range.decimate));
    if (range.source !== undefined) params.set('source', range.source);
    const q = params.toString();
    const resp = await fetch(`${this.base}/api/scenes/${id}/frames${q ? '?' + q : ''}`);
    if (!resp.ok) await raise(resp);
    const raw = await resp.arrayBuffer();
    return { frames: decodeFrames(raw), raw };
  }

  /**
   * Subscribe to a job's progress. Uses Server-Sent Events in the browser
   * and falls back to cursor polling where EventSource is unavailable.
   * Resolves with the terminal job handle; events arrive in iteration
   * order exactly as transported.
   */
  async followJob(
    id: string,
    onEvent: (ev: ProgressEvent) => void,
    pollMs = 50,
  ): Promise<JobHandle> {
    if (typeof EventSource !== 'undefined') {
      await new Promise<void>((resolve, reject) => {
        const source = new EventSource(`${this.base}/api/jobs/${id}/stream`);
        source.onmessage = (msg) => onEvent(JSON.parse(msg.data) as ProgressEvent);
        source.addEventListener('end', () => {
          source.close();
          resolve();
        });
        source.onerror = () => {
          source.close();
          reject(new ApiError(0, [`event stream for job ${id} dropped`]));
        };
      });
    } else {
      let cursor = 0;
      for (;;) {
        const batch = await this.events(id, cursor);
        for (const ev of batch.events) onEvent(ev);
        cursor = batch.next;
        if (batch.done) break;
        await new Promise((r) => setTimeout(r, pollMs));
      }
    }
    return this.job(id);
  }

  /** Poll a job without consuming its event stream. */
  async waitForJob(id: string, pollMs = 50): Promise<JobHandle> {
    for (;;) {
      const handle = await this.job(id);
      if (handle.state === 'done' || handle.state === 'failed') return handle;
      await new Promise((r) => setTimeout(r, pollMs));
    }
  }
}
