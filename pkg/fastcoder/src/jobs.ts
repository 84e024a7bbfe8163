/**
 * Coder-job batch framing (see the reference repo's docs/FORMAT.md).
 *
 *   batch   = "FCJ1" u8(direction) u32(n_planes) plane*
 *   plane   = u64(n) i64(v_min) i64(v_max) cum
 *             + symbols (encode) | u64(len) stream (decode)
 *   cum     = n rows of (K+1) u32, K = v_max - v_min + 1
 *   results = "FCR1" u32(n_planes)
 *             + per plane: u64(len) stream (encode) | u64(n) i64 symbols (decode)
 *
 * All integers little-endian. Parsing is strict: wrong magic, bad direction,
 * truncation, invalid tables, out-of-bounds symbols, and trailing bytes all
 * raise JobFormatError with the offending byte offset.
 */

import { decodePlane, encodePlane, TOTAL_FREQ } from "./rangecoder.js";

export const ENCODE = 0;
export const DECODE = 1;

const JOB_MAGIC = 0x314a4346; // "FCJ1" little-endian
const RESULT_MAGIC = 0x31524346; // "FCR1"

const POW32 = 0x100000000;
const HI_SAFE = 0x200000; // |i64| < 2^53 iff the high word is in [-2^21, 2^21)
const LITTLE_ENDIAN = new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

export class JobFormatError extends Error {}

export interface Plane {
  count: number;
  vMin: number;
  vMax: number;
  /** row-major [count, K+1] cumulative frequencies */
  cum: Uint32Array;
  /** present when direction is ENCODE */
  symbols?: Float64Array;
  /** present when direction is DECODE */
  stream?: Uint8Array;
}

class Reader {
  pos = 0;
  private readonly view: DataView;

  constructor(private readonly data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(n: number): void {
    if (this.pos + n > this.data.length) {
      throw new JobFormatError(`truncated at offset ${this.pos}: need ${n} bytes`);
    }
  }

  u8(): number {
    this.need(1);
    return this.view.getUint8(this.pos++);
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u64(): number {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, true);
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new JobFormatError(`implausible u64 ${v} at offset ${this.pos}`);
    }
    this.pos += 8;
    return Number(v);
  }

  i64(): number {
    this.need(8);
    const v = this.view.getBigInt64(this.pos, true);
    if (v > BigInt(Number.MAX_SAFE_INTEGER) || v < -BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new JobFormatError(`implausible i64 ${v} at offset ${this.pos}`);
    }
    this.pos += 8;
    return Number(v);
  }

  bytes(n: number): Uint8Array {
    this.need(n);
    const out = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  /** n little-endian u32 values, copied into an aligned array. */
  u32Array(n: number): Uint32Array {
    this.need(4 * n);
    const start = this.data.byteOffset + this.pos;
    this.pos += 4 * n;
    if (LITTLE_ENDIAN) {
      // buffer.slice realigns, so the bulk copy stays a plain memcpy
      return new Uint32Array(this.data.buffer.slice(start, start + 4 * n));
    }
    const out = new Uint32Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = this.view.getUint32(start - this.data.byteOffset + 4 * i, true);
    }
    return out;
  }

  /** n little-endian i64 values as numbers. */
  i64Array(n: number): Float64Array {
    this.need(8 * n);
    const start = this.data.byteOffset + this.pos;
    const words = LITTLE_ENDIAN
      ? new Uint32Array(this.data.buffer.slice(start, start + 8 * n))
      : null;
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      const lo = words ? words[2 * i] : this.view.getUint32(this.pos + 8 * i, true);
      const hi = (words ? words[2 * i + 1] : this.view.getUint32(this.pos + 8 * i + 4, true)) | 0;
      if (hi >= HI_SAFE || hi < -HI_SAFE) {
        throw new JobFormatError(`implausible symbol at offset ${this.pos + 8 * i}`);
      }
      out[i] = hi * POW32 + lo;
    }
    this.pos += 8 * n;
    return out;
  }
}

function validateTable(cum: Uint32Array, count: number, k: number, offset: number): void {
  const stride = k + 1;
  for (let i = 0; i < count; i++) {
    const base = i * stride;
    if (cum[base] !== 0 || cum[base + k] !== TOTAL_FREQ) {
      throw new JobFormatError(`invalid cdf table at offset ${offset}`);
    }
    for (let j = 0; j < k; j++) {
      if (cum[base + j + 1] <= cum[base + j]) {
        throw new JobFormatError(`invalid cdf table at offset ${offset}`);
      }
    }
  }
}

export function parseJobs(data: Uint8Array): { direction: number; planes: Plane[] } {
  const r = new Reader(data);
  if (r.u32() !== JOB_MAGIC) {
    throw new JobFormatError("bad job magic at offset 0");
  }
  const direction = r.u8();
  if (direction !== ENCODE && direction !== DECODE) {
    throw new JobFormatError(`bad direction byte at offset 4: ${direction}`);
  }
  const nPlanes = r.u32();
  const planes: Plane[] = [];
  for (let p = 0; p < nPlanes; p++) {
    const count = r.u64();
    const vMin = r.i64();
    const vMax = r.i64();
    const k = vMax - vMin + 1;
    if (k < 1) {
      throw new JobFormatError(`empty alphabet before offset ${r.pos}`);
    }
    const cumOffset = r.pos;
    const cum = r.u32Array(count * (k + 1));
    if (count > 0) {
      validateTable(cum, count, k, cumOffset);
    }
    const plane: Plane = { count, vMin, vMax, cum };
    if (direction === ENCODE) {
      const symbols = r.i64Array(count);
      for (let i = 0; i < count; i++) {
        if (symbols[i] < vMin || symbols[i] > vMax) {
          throw new JobFormatError(`symbols out of bounds before offset ${r.pos}`);
        }
      }
      plane.symbols = symbols;
    } else {
      plane.stream = r.bytes(r.u64());
    }
    planes.push(plane);
  }
  if (r.pos !== data.length) {
    throw new JobFormatError(`${data.length - r.pos} trailing bytes at offset ${r.pos}`);
  }
  return { direction, planes };
}

export function serializeJobs(direction: number, planes: Plane[]): Uint8Array {
  if (direction !== ENCODE && direction !== DECODE) {
    throw new JobFormatError(`direction must be 0 or 1, got ${direction}`);
  }
  let size = 9;
  for (const p of planes) {
    const k = p.vMax - p.vMin + 1;
    size += 24 + 4 * p.count * (k + 1);
    size += direction === ENCODE ? 8 * p.count : 8 + p.stream!.length;
  }
  const out = new Uint8Array(size);
  const view = new DataView(out.buffer);
  view.setUint32(0, JOB_MAGIC, true);
  view.setUint8(4, direction);
  view.setUint32(5, planes.length, true);
  let pos = 9;
  for (const p of planes) {
    const k = p.vMax - p.vMin + 1;
    view.setBigUint64(pos, BigInt(p.count), true);
    view.setBigInt64(pos + 8, BigInt(p.vMin), true);
    view.setBigInt64(pos + 16, BigInt(p.vMax), true);
    pos += 24;
    if (LITTLE_ENDIAN) {
      out.set(new Uint8Array(p.cum.buffer, p.cum.byteOffset, 4 * p.cum.length), pos);
      pos += 4 * p.cum.length;
    } else {
      for (let i = 0; i < p.cum.length; i++, pos += 4) {
        view.setUint32(pos, p.cum[i], true);
      }
    }
    if (direction === ENCODE) {
      const sym = p.symbols!;
      for (let i = 0; i < sym.length; i++, pos += 8) {
        const hi = Math.floor(sym[i] / POW32);
        view.setUint32(pos, sym[i] - hi * POW32, true);
        view.setInt32(pos + 4, hi, true);
      }
    } else {
      view.setBigUint64(pos, BigInt(p.stream!.length), true);
      pos += 8;
      out.set(p.stream!, pos);
      pos += p.stream!.length;
    }
  }
  return out;
}

/** Execute a parsed batch; returns the serialized result frame. */
export function runJobs(data: Uint8Array): Uint8Array {
  const { direction, planes } = parseJobs(data);
  const parts: Uint8Array[] = [];
  let total = 8;
  for (const plane of planes) {
    const k = plane.vMax - plane.vMin + 1;
    if (direction === ENCODE) {
      const stream = encodePlane(plane.symbols!, plane.vMin, plane.cum, k);
      const framed = new Uint8Array(8 + stream.length);
      new DataView(framed.buffer).setBigUint64(0, BigInt(stream.length), true);
      framed.set(stream, 8);
      parts.push(framed);
    } else {
      const symbols = decodePlane(plane.stream!, plane.count, plane.vMin, plane.cum, k);
      const framed = new Uint8Array(8 + 8 * symbols.length);
      const view = new DataView(framed.buffer);
      view.setBigUint64(0, BigInt(symbols.length), true);
      for (let i = 0; i < symbols.length; i++) {
        const hi = Math.floor(symbols[i] / POW32);
        view.setUint32(8 + 8 * i, symbols[i] - hi * POW32, true);
        view.setInt32(12 + 8 * i, hi, true);
      }
      parts.push(framed);
    }
    total += parts[parts.length - 1].length;
  }
  const out = new Uint8Array(total);
  const view = new DataView(out.buffer);
  view.setUint32(0, RESULT_MAGIC, true);
  view.setUint32(4, planes.length, true);
  let pos = 8;
  for (const part of parts) {
    out.set(part, pos);
    pos += part.length;
  }
  return out;
}

/** Split a result frame back into per-plane streams or symbol arrays. */
export function parseResults(
  data: Uint8Array,
  direction: number
): Array<Uint8Array | Float64Array> {
  const r = new Reader(data);
  if (r.u32() !== RESULT_MAGIC) {
    throw new JobFormatError("bad result magic at offset 0");
  }
  const nPlanes = r.u32();
  const out: Array<Uint8Array | Float64Array> = [];
  for (let i = 0; i < nPlanes; i++) {
    const n = r.u64();
    out.push(direction === ENCODE ? r.bytes(n) : r.i64Array(n));
  }
  if (r.pos !== data.length) {
    throw new JobFormatError(`${data.length - r.pos} trailing bytes at offset ${r.pos}`);
  }
  return out;
}
