/**
 * Binary frame decoding.
 *
 * A frames response is a concatenation of per-state blocks, each:
 *   magic "FEFRAME\0" (8 bytes), version u32, particle count u64, dim u32,
 *   layout length u16, layout string (ascii, e.g. "x:f8;v:f8"), then one
 *   contiguous float64 array per layout field, all little-endian.
 *
 * Decoding copies bytes into typed arrays and never converts through text,
 * so the floats handed to the renderer are bit-identical to what the
 * server wrote.
 */

import type { Frame } from './types.js';

const MAGIC = 'FEFRAME\0';
const HEADER_BYTES = 8 + 4 + 8 + 4 + 2;

function readFloats(buf: ArrayBuffer, offset: number, n: number): Float64Array {
  // A block's payload is rarely 8-byte aligned within the response, so
  // slice to a fresh buffer before viewing.
  return new Float64Array(buf.slice(offset, offset + n * 8));
}

export function decodeFrames(buf: ArrayBuffer): Frame[] {
  const view = new DataView(buf);
  const frames: Frame[] = [];
  let offset = 0;
  while (offset < buf.byteLength) {
    if (offset + HEADER_BYTES > buf.byteLength) {
      throw new Error(`truncated frame header at byte ${offset}`);
    }
    let magic = '';
    for (let i = 0; i < 8; i++) magic += String.fromCharCode(view.getUint8(offset + i));
    if (magic !== MAGIC) {
      throw new Error(`bad frame magic at byte ${offset}`);
    }
    const version = view.getUint32(offset + 8, true);
    if (version !== 1) {
      throw new Error(`unsupported frame version ${version}`);
    }
    const count = Number(view.getBigUint64(offset + 12, true));
    const dim = view.getUint32(offset + 20, true);
    const layoutLen = view.getUint16(offset + 24, true);
    let cursor = offset + HEADER_BYTES;
    let layout = '';
    for (let i = 0; i < layoutLen; i++) layout += String.fromCharCode(view.getUint8(cursor + i));
    cursor += layoutLen;

    const fields: Record<string, Float64Array> = {};
    for (const part of layout.split(';')) {
      const [name, kind] = part.split(':');
      if (kind !== 'f8') {
        throw new Error(`unsupported field kind '${kind}' in layout '${layout}'`);
      }
      const n = count * dim;
      if (cursor + n * 8 > buf.byteLength) {
        throw new Error(`truncated '${name}' payload at byte ${cursor}`);
      }
      fields[name] = readFloats(buf, cursor, n);
      cursor += n * 8;
    }
    if (!fields.x || !fields.v) {
      throw new Error(`layout '${layout}' is missing x or v`);
    }
    frames.push({ count, dim, layout, x: fields.x, v: fields.v });
    offset = cursor;
  }
  return frames;
}
