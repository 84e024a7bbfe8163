/**
 * 32-bit carry-aware range coder, byte-for-byte identical to the reference
 * implementation it replaces.
 *
 * State invariants keep every intermediate below 2^41, so plain float64
 * numbers are exact and no BigInt is needed in the hot loop:
 *   - range < 2^32, and r = floor(range / total) < 2^16
 *   - low < 2^33 (a 32-bit value plus one pending carry)
 * Streams begin with one dummy byte from the initial cache flush and end
 * with five flush bytes.
 */

const TOP = 0x1000000; // 2^24
const POW24 = 0x1000000;
const POW32 = 0x100000000;
const MASK32 = 0xffffffff;

export const TOTAL_FREQ = 65536;

export class CorruptStreamError extends Error {}

/** Growable byte sink; avoids per-byte Buffer reallocation. */
class ByteSink {
  buf = new Uint8Array(4096);
  len = 0;

  push(b: number): void {
    if (this.len === this.buf.length) {
      const next = new Uint8Array(this.buf.length * 2);
      next.set(this.buf);
      this.buf = next;
    }
    this.buf[this.len++] = b;
  }

  bytes(): Uint8Array {
    return this.buf.subarray(0, this.len);
  }
}

export class RangeEncoder {
  private low = 0; // may exceed 2^32 until the next shift absorbs the carry
  private range = MASK32;
  private cache = 0;
  private cacheSize = 1;
  private sink = new ByteSink();

  encode(cumLo: number, cumHi: number, total: number = TOTAL_FREQ): void {
    const r = Math.floor(this.range / total);
    this.low += r * cumLo;
    this.range = r * (cumHi - cumLo);
    while (this.range < TOP) {
      this.range *= 256; // range < 2^24 here, so no 32-bit wrap is possible
      this.shiftLow();
    }
  }

  private shiftLow(): void {
    if (this.low < 0xff000000 || this.low > MASK32) {
      const carry = this.low >= POW32 ? 1 : 0;
      this.sink.push((this.cache + carry) & 0xff);
      for (let i = this.cacheSize - 1; i > 0; i--) {
        this.sink.push((0xff + carry) & 0xff);
      }
      this.cache = Math.floor(this.low / POW24) & 0xff;
      this.cacheSize = 0;
    }
    this.cacheSize += 1;
    this.low = (this.low * 256) % POW32;
  }

  finish(): Uint8Array {
    for (let i = 0; i < 5; i++) {
      this.shiftLow();
    }
    return this.sink.bytes();
  }
}

export class RangeDecoder {
  private readonly data: Uint8Array;
  private pos = 1; // skip the encoder's initial cache byte
  private range = MASK32;
  private code = 0;
  private r = 0;

  constructor(data: Uint8Array) {
    this.data = data;
    for (let i = 0; i < 4; i++) {
      this.code = this.code * 256 + this.nextByte();
    }
  }

  private nextByte(): number {
    if (this.pos < this.data.length) {
      return this.data[this.pos++];
    }
    throw new CorruptStreamError("range coder ran past end of stream");
  }

  decodeFreq(total: number = TOTAL_FREQ): number {
    this.r = Math.floor(this.range / total);
    const f = Math.floor(this.code / this.r);
    return f >= total ? total - 1 : f;
  }

  decodeUpdate(cumLo: number, cumHi: number): void {
    this.code -= this.r * cumLo;
    this.range = this.r * (cumHi - cumLo);
    while (this.range < TOP) {
      this.range *= 256;
      this.code = (this.code * 256 + this.nextByte()) % POW32;
    }
  }
}

/**
 * Entropy-code a plane; element i uses row i of the cumulative table.
 * `cum` is row-major with stride K+1, `symbols` holds vMin-based values.
 */
export function encodePlane(
  symbols: Float64Array,
  vMin: number,
  cum: Uint32Array,
  k: number
): Uint8Array {
  const stride = k + 1;
  const enc = new RangeEncoder();
  for (let i = 0; i < symbols.length; i++) {
    const base = i * stride + (symbols[i] - vMin);
    enc.encode(cum[base], cum[base + 1]);
  }
  return enc.finish();
}

/** Inverse of encodePlane; returns vMin-based symbol values. */
export function decodePlane(
  data: Uint8Array,
  count: number,
  vMin: number,
  cum: Uint32Array,
  k: number
): Float64Array {
  const out = new Float64Array(count);
  if (count === 0) {
    return out;
  }
  if (data.length < 5) {
    throw new CorruptStreamError("stream shorter than coder framing");
  }
  const stride = k + 1;
  const dec = new RangeDecoder(data);
  for (let i = 0; i < count; i++) {
    const f = dec.decodeFreq();
    const base = i * stride;
    // upper bound: largest s with cum[base+s] <= f
    let lo = 0;
    let hi = k;
    while (lo + 1 < hi) {
      const mid = (lo + hi) >> 1;
      if (cum[base + mid] <= f) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    dec.decodeUpdate(cum[base + lo], cum[base + lo + 1]);
    out[i] = vMin + lo;
  }
  return out;
}
