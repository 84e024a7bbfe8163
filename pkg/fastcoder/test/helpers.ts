/**
 * Shared fuzz plumbing: a deterministic PRNG, random valid CDF tables, and
 * the subprocess seam to the reference implementation (`fcnr coder-job`).
 */

import { execFileSync } from "node:child_process";

import type { Plane } from "../src/jobs.js";
import { TOTAL_FREQ } from "../src/rangecoder.js";

/** mulberry32: tiny seeded PRNG, floats in [0, 1). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 0x100000000;
  };
}

/**
 * Random valid cumulative rows: cum[0] = 0, cum[K] = TOTAL_FREQ, strictly
 * increasing. Spiky rows concentrate nearly all mass in a few bins, leaving
 * the rest at the minimum frequency of 1.
 */
export function randomCum(rng: () => number, count: number, k: number, spiky = false): Uint32Array {
  const cum = new Uint32Array(count * (k + 1));
  const w = new Float64Array(k);
  const rem = TOTAL_FREQ - k;
  for (let i = 0; i < count; i++) {
    let sum = 0;
    for (let j = 0; j < k; j++) {
      const u = rng() + 1e-12;
      w[j] = spiky ? u ** 8 : u;
      sum += w[j];
    }
    const base = i * (k + 1);
    let acc = 0;
    let given = 0;
    for (let j = 0; j < k; j++) {
      acc += (w[j] / sum) * rem;
      const alloc = j === k - 1 ? rem - given : Math.min(Math.floor(acc) - given, rem - given);
      given += alloc;
      cum[base + j + 1] = cum[base + j] + 1 + alloc;
    }
  }
  return cum;
}

/** Encode-direction plane with uniform random symbols over the alphabet. */
export function randomEncodePlane(rng: () => number, maxCountExp = 3): Plane {
  const count = Math.max(1, Math.round(10 ** (1 + rng() * (maxCountExp - 1))));
  const k = rng() < 0.05 ? 1 : 1 + Math.round(10 ** (rng() * 2.3));
  const vMin = -(k >> 1);
  const cum = randomCum(rng, count, k, rng() < 0.3);
  const symbols = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    symbols[i] = vMin + Math.floor(rng() * k);
  }
  return { count, vMin, vMax: vMin + k - 1, cum, symbols };
}

/** Run a serialized job batch through the reference coder subprocess. */
export function referenceJobs(job: Uint8Array): Buffer {
  return execFileSync("fcnr", ["coder-job"], { input: job, maxBuffer: 1 << 30 });
}
