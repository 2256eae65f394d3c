/**
 * Canvas rendering split in two stages: a pure draw-list builder that maps
 * server coordinates through the viewport transform (and nothing else: no
 * smoothing, no rounding), and a painter that puts a draw list on a 2D
 * canvas. Tests exercise the builder; the browser runs both.
 */

import type { EditorSession } from './session.js';
import type { Frame, Solution } from './types.js';

export interface Viewport {
  scale: number;
  offsetX: number;
  offsetY: number;
  /** Canvas pixel height, for the y flip (world y up, canvas y down). */
  height: number;
}

export interface Disc {
  x: number;
  y: number;
  r: number;
  color: string;
}

export interface Outline {
  x: number;
  y: number;
  w: number;
  h: number;
  color: string;
  dashed: boolean;
}

export interface DrawList {
  discs: Disc[];
  outlines: Outline[];
  nodes: Disc[];
  polyline: { points: [number, number][]; color: string } | null;
  placeholder: string | null;
}

export function fitViewport(
  domainLo: number[],
  domainHi: number[],
  widthPx: number,
  heightPx: number,
  marginPx = 20,
): Viewport {
  const spanX = domainHi[0] - domainLo[0];
  const spanY = domainHi[1] - domainLo[1];
  const scale = Math.min(
    (widthPx - 2 * marginPx) / spanX,
    (heightPx - 2 * marginPx) / spanY,
  );
  return {
    scale,
    offsetX: marginPx - domainLo[0] * scale,
    offsetY: marginPx - domainLo[1] * scale,
    height: heightPx,
  };
}

export function worldToScreen(vp: Viewport, wx: number, wy: number): [number, number] {
  return [wx * vp.scale + vp.offsetX, vp.height - (wy * vp.scale + vp.offsetY)];
}

export function screenToWorld(vp: Viewport, sx: number, sy: number): [number, number] {
  return [(sx - vp.offsetX) / vp.scale, (vp.height - sy - vp.offsetY) / vp.scale];
}

export const COLOR_ORIGINAL = '#4878cf';
export const COLOR_CONTROLLED = '#d64541';
export const COLOR_SELECTED = '#f5a623';
export const COLOR_WINDOW = '#30343a';
export const COLOR_BUFFER = '#9aa1ab';
export const COLOR_NODE = '#7d3cb5';
export const COLOR_PATHLINE = '#2e9e5b';

function frameDiscs(
  frame: Frame,
  vp: Viewport,
  radiusWorld: number,
  color: string,
  discs: Disc[],
): void {
  const r = radiusWorld * vp.scale;
  for (let i = 0; i < frame.count; i++) {
    const [x, y] = worldToScreen(vp, frame.x[i * frame.dim], frame.x[i * frame.dim + 1]);
    discs.push({ x, y, r, color });
  }
}

function boxOutline(
  lo: number[],
  hi: number[],
  vp: Viewport,
  color: string,
  dashed: boolean,
): Outline {
  const [x0, y1] = worldToScreen(vp, lo[0], lo[1]);
  const [x1, y0] = worldToScreen(vp, hi[0], hi[1]);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0, color, dashed };
}

/**
 * Build everything to draw for the session's current frame index. Original
 * particles are blue, controlled red; in "both" mode the original layer is
 * drawn underneath. A missing frame yields a placeholder message instead
 * of discs so the UI can offer a retry.
 */
export function buildDrawList(
  session: EditorSession,
  vp: Viewport,
  solution: Solution | null = null,
): DrawList {
  const scene = session.scene;
  const list: DrawList = {
    discs: [],
    outlines: [boxOutline(scene.domain_lo, scene.domain_hi, vp, COLOR_WINDOW, false)],
    nodes: [],
    polyline: null,
    placeholder: null,
  };

  const wantOriginal = session.overlay !== 'controlled';
  const wantControlled = session.overlay !== 'original';
  const original = wantOriginal ? session.frameAt('baseline', session.frame) : null;
  const controlled =
    wantControlled && session.controlledSource
      ? session.frameAt(session.controlledSource, session.frame)
      : null;

  if (wantOriginal && !original) {
    list.placeholder = 'baseline frames not loaded';
  } else if (wantControlled && session.controlledSource && !controlled) {
    list.placeholder = 'controlled frames not loaded';
  }

  if (original) {
    frameDiscs(original, vp, scene.particle_radius, COLOR_ORIGINAL, list.discs);
  }
  if (controlled) {
    frameDiscs(controlled, vp, scene.particle_radius, COLOR_CONTROLLED, list.discs);
  }
  if (original && session.selected.length > 0) {
    const r = scene.particle_radius * vp.scale * 1.4;
    for (const i of session.selected) {
      const [x, y] = worldToScreen(vp, original.x[i * original.dim], original.x[i * original.dim + 1]);
      list.discs.push({ x, y, r, color: COLOR_SELECTED });
    }
  }

  if (session.window) {
    const { lo, hi } = session.window;
    list.outlines.push(boxOutline(lo, hi, vp, COLOR_WINDOW, false));
    const b = session.params.bufferThickness;
    list.outlines.push(
      boxOutline([lo[0] - b, lo[1] - b], [hi[0] + b, hi[1] + b], vp, COLOR_BUFFER, true),
    );
  }

  if (session.pathline && session.pathline.vertices.length > 0) {
    list.polyline = {
      points: session.pathline.vertices.map((v) => worldToScreen(vp, v[0], v[1])),
      color: COLOR_PATHLINE,
    };
  }

  if (solution) {
    const win = solution.window;
    const [nx, ny] = win.node_counts;
    const r = Math.max(2, 0.15 * win.grid_spacing * vp.scale);
    for (let i = 0; i < nx; i++) {
      for (let j = 0; j < ny; j++) {
        const [x, y] = worldToScreen(
          vp,
          win.origin[0] + i * win.grid_spacing,
          win.origin[1] + j * win.grid_spacing,
        );
        list.nodes.push({ x, y, r, color: COLOR_NODE });
      }
    }
  }
  return list;
}

export function drawScene(ctx: CanvasRenderingContext2D, list: DrawList): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  for (const o of list.outlines) {
    ctx.strokeStyle = o.color;
    ctx.setLineDash(o.dashed ? [6, 4] : []);
    ctx.lineWidth = 1.5;
    ctx.strokeRect(o.x, o.y, o.w, o.h);
  }
  ctx.setLineDash([]);
  for (const d of list.discs) {
    ctx.beginPath();
    ctx.arc(d.x, d.y, d.r, 0, 2 * Math.PI);
    ctx.fillStyle = d.color;
    ctx.globalAlpha = 0.85;
    ctx.fill();
  }
  ctx.globalAlpha = 1.0;
  for (const n of list.nodes) {
    ctx.fillStyle = n.color;
    ctx.fillRect(n.x - n.r / 2, n.y - n.r / 2, n.r, n.r);
  }
  if (list.polyline && list.polyline.points.length > 0) {
    ctx.strokeStyle = list.polyline.color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    const [first, ...rest] = list.polyline.points;
    ctx.moveTo(first[0], first[1]);
    for (const p of rest) ctx.lineTo(p[0], p[1]);
    ctx.stroke();
    for (const p of list.polyline.points) {
      ctx.beginPath();
      ctx.arc(p[0], p[1], 4, 0, 2 * Math.PI);
      ctx.fillStyle = list.polyline.color;
      ctx.fill();
    }
  }
  if (list.placeholder) {
    ctx.fillStyle = '#666';
    ctx.font = '14px system-ui, sans-serif';
    ctx.textAlign = 'center';
    ctx.fillText(
      `${list.placeholder} - press Load to retry`,
      ctx.canvas.width / 2,
      ctx.canvas.height / 2,
    );
  }
}
