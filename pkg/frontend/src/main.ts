/**
 * Browser wiring: connects the session state machine, renderer, and API
 * client to the page. Everything the engine does arrives through the HTTP
 * API; this file is DOM glue only.
 */

import { ApiError, EditClient } from './api.js';
import { drawLossChart } from './loss.js';
import { buildDrawList, drawScene, fitViewport, screenToWorld } from './render.js';
import { EditorSession } from './session.js';
import type { Solution } from './types.js';

type Tool = 'select' | 'window' | 'pathline';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>('scene-canvas');
const lossCanvas = $<HTMLCanvasElement>('loss-canvas');
const ctx = canvas.getContext('2d')!;
const lossCtx = lossCanvas.getContext('2d')!;
const status = $<HTMLElement>('status');
const errorsBox = $<HTMLElement>('form-errors');
const scrubber = $<HTMLInputElement>('scrubber');
const frameLabel = $<HTMLElement>('frame-label');
const submitBtn = $<HTMLButtonElement>('submit');
const hintBox = $<HTMLElement>('submit-hint');

let client = new EditClient(location.origin);
let session: EditorSession | null = null;
let solution: Solution | null = null;
let tool: Tool = 'select';
let playing = false;
let dragStart: [number, number] | null = null;
let dragNow: [number, number] | null = null;

function say(text: string): void {
  status.textContent = text;
}

function showErrors(errors: Map<string, string>): void {
  errorsBox.innerHTML = '';
  for (const [field, message] of errors) {
    const li = document.createElement('li');
    li.textContent = field ? `${field}: ${message}` : message;
    errorsBox.appendChild(li);
  }
}

function viewport() {
  if (!session) throw new Error('no session');
  return fitViewport(session.scene.domain_lo, session.scene.domain_hi,
                     canvas.width, canvas.height);
}

function redraw(): void {
  if (!session) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const vp = viewport();
  const list = buildDrawList(session, vp, solution);
  if (dragStart && dragNow) {
    const [x0, y0] = dragStart;
    const [x1, y1] = dragNow;
    list.outlines.push({
      x: Math.min(x0, x1), y: Math.min(y0, y1),
      w: Math.abs(x1 - x0), h: Math.abs(y1 - y0),
      color: '#30343a', dashed: true,
    });
  }
  drawScene(ctx, list);
  frameLabel.textContent = `frame ${session.frame}`;
  scrubber.value = String(session.frame);
  const hint = session.submitHint();
  submitBtn.disabled = hint !== null;
  hintBox.textContent = hint ?? '';
}

function frameCount(): number {
  return session?.frames.get('baseline')?.length ?? 0;
}

async function refreshScenes(): Promise<void> {
  const scenes = await client.listScenes();
  const select = $<HTMLSelectElement>('scene-select');
  select.innerHTML = '';
  for (const s of scenes) {
    const opt = document.createElement('option');
    opt.value = s.id;
    opt.textContent = `${s.id} (${s.n_particles}p, ${s.steps} steps${s.has_baseline ? '' : ', no baseline'})`;
    select.appendChild(opt);
  }
}

async function openScene(id: string): Promise<void> {
  const scene = await client.getScene(id);
  session = new EditorSession(scene);
  solution = null;
  if (scene.has_baseline) {
    await session.loadBaseline(client);
    scrubber.max = String(Math.max(frameCount() - 1, 0));
    say(`scene ${id}: ${frameCount()} baseline frames loaded`);
  } else {
    say(`scene ${id}: no baseline yet - press Run baseline`);
  }
  redraw();
}

$<HTMLButtonElement>('connect').addEventListener('click', async () => {
  client = new EditClient($<HTMLInputElement>('server-url').value || location.origin);
  try {
    await refreshScenes();
    say('connected');
  } catch (err) {
    say(`connection failed: ${(err as Error).message}`);
  }
});

$<HTMLButtonElement>('create-scene').addEventListener('click', async () => {
  try {
    const made = await client.createScene($<HTMLTextAreaElement>('scene-config').value);
    await refreshScenes();
    $<HTMLSelectElement>('scene-select').value = made.id;
    await openScene(made.id);
  } catch (err) {
    if (err instanceof ApiError) showErrors(new Map(err.errors.map((e) => ['', e] as [string, string])));
    say(`scene rejected (${(err as Error).message})`);
  }
});

$<HTMLSelectElement>('scene-select').addEventListener('change', (ev) => {
  void openScene((ev.target as HTMLSelectElement).value);
});

$<HTMLButtonElement>('run-baseline').addEventListener('click', async () => {
  if (!session) return;
  say('baseline running...');
  const job = await client.runBaseline(session.scene.id);
  const done = await client.waitForJob(job.id);
  if (done.state !== 'done') {
    say(`baseline failed: ${done.error}`);
    return;
  }
  await session.loadBaseline(client);
  scrubber.max = String(Math.max(frameCount() - 1, 0));
  say(`baseline ready: ${frameCount()} frames`);
  redraw();
});

$<HTMLButtonElement>('load-frames').addEventListener('click', async () => {
  if (!session) return;
  await session.loadBaseline(client);
  if (session.controlledSource) {
    const { frames } = await client.fetchFrames(session.scene.id, { source: session.controlledSource });
    session.frames.set(session.controlledSource, frames);
  }
  redraw();
});

for (const name of ['select', 'window', 'pathline'] as Tool[]) {
  $<HTMLInputElement>(`tool-${name}`).addEventListener('change', () => {
    tool = name;
  });
}

for (const mode of ['original', 'controlled', 'both'] as const) {
  $<HTMLInputElement>(`overlay-${mode}`).addEventListener('change', () => {
    if (session) {
      session.overlay = mode;
      redraw();
    }
  });
}

canvas.addEventListener('mousedown', (ev) => {
  if (tool !== 'window' || !session) return;
  dragStart = [ev.offsetX, ev.offsetY];
  dragNow = dragStart;
});

canvas.addEventListener('mousemove', (ev) => {
  if (dragStart) {
    dragNow = [ev.offsetX, ev.offsetY];
    redraw();
  }
});

canvas.addEventListener('mouseup', (ev) => {
  if (!session) return;
  if (tool === 'window' && dragStart) {
    const vp = viewport();
    const a = screenToWorld(vp, dragStart[0], dragStart[1]);
    const b = screenToWorld(vp, ev.offsetX, ev.offsetY);
    dragStart = dragNow = null;
    try {
      session.setWindow(a, b,
        Number($<HTMLInputElement>('t-start').value),
        Number($<HTMLInputElement>('t-end').value));
      say('window set');
    } catch (err) {
      say((err as Error).message);
    }
    redraw();
  }
});

canvas.addEventListener('click', (ev) => {
  if (!session) return;
  const vp = viewport();
  const [wx, wy] = screenToWorld(vp, ev.offsetX, ev.offsetY);
  if (tool === 'select') {
    const frame = session.frameAt('baseline', session.frame);
    if (!frame) return;
    const reach = 2.5 * session.scene.particle_radius;
    if (!ev.shiftKey) session.selected = [];
    for (let i = 0; i < frame.count; i++) {
      const dx = frame.x[i * frame.dim] - wx;
      const dy = frame.x[i * frame.dim + 1] - wy;
      if (Math.sqrt(dx * dx + dy * dy) <= reach && !session.selected.includes(i)) {
        session.selected.push(i);
      }
    }
    say(`${session.selected.length} particles selected`);
    redraw();
  } else if (tool === 'pathline') {
    try {
      session.addPathlineVertex([wx, wy], session.frame);
      say(`pathline: ${session.pathline?.vertices.length} vertices`);
    } catch (err) {
      say((err as Error).message);
    }
    redraw();
  }
});

$<HTMLButtonElement>('clear-drafts').addEventListener('click', () => {
  session?.clearDrafts();
  showErrors(new Map());
  redraw();
});

function readParams(): void {
  if (!session) return;
  const num = (id: string) => Number($<HTMLInputElement>(id).value);
  session.params.gridSpacing = num('grid-spacing');
  session.params.bufferThickness = num('buffer-thickness');
  session.params.kE = num('k-e');
  session.params.kF = num('k-f');
  session.params.kT = num('k-t');
  session.params.kS = num('k-s');
  session.params.kB = num('k-b');
  session.params.maxIters = num('max-iters');
  session.params.searchWindow = $<HTMLInputElement>('search-window').checked;
}

submitBtn.addEventListener('click', async () => {
  if (!session) return;
  readParams();
  showErrors(new Map());
  say('submitting edit...');
  try {
    const outcome = await session.submitEdit(client);
    solution = outcome.solution;
    const last = session.events[session.events.length - 1];
    scrubber.max = String(Math.max(frameCount() - 1, 0));
    say(`job ${outcome.edit.id} done: total ${last?.total.toExponential(3)}; playback shows both`);
    $<HTMLInputElement>('overlay-both').checked = true;
  } catch (err) {
    showErrors(session.formErrors);
    say(`edit failed: ${(err as Error).message}`);
  }
  drawLossChart(lossCtx, session.events);
  redraw();
});

// live loss curve while a job streams
setInterval(() => {
  if (session && session.events.length > 0) {
    drawLossChart(lossCtx, session.events);
  }
}, 250);

scrubber.addEventListener('input', () => {
  if (!session) return;
  session.frame = Number(scrubber.value);
  redraw();
});

$<HTMLButtonElement>('play').addEventListener('click', () => {
  playing = !playing;
  $<HTMLButtonElement>('play').textContent = playing ? 'Pause' : 'Play';
});

let lastTick = 0;
function tick(now: number): void {
  if (playing && session && now - lastTick > 50) {
    lastTick = now;
    const n = frameCount();
    if (n > 0) {
      session.frame = (session.frame + 1) % n;
      redraw();
    }
  }
  requestAnimationFrame(tick);
}
requestAnimationFrame(tick);

void (async () => {
  $<HTMLInputElement>('server-url').value = location.origin;
  try {
    await refreshScenes();
    const select = $<HTMLSelectElement>('scene-select');
    if (select.options.length > 0) await openScene(select.value);
    say('ready');
  } catch {
    say('not connected - set the server URL and press Connect');
  }
})();
