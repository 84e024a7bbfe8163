import { expect, test } from "vitest";

import { CorruptStreamError, decodePlane, encodePlane } from "../src/rangecoder.js";
import { mulberry32, randomCum } from "./helpers.js";

test("empty plane is pure framing", () => {
  const stream = encodePlane(new Float64Array(0), 0, new Uint32Array(0), 1);
  expect(stream.length).toBe(5);
  expect(decodePlane(stream, 0, 0, new Uint32Array(0), 1).length).toBe(0);
});

test("round trip across alphabet and plane sizes", () => {
  const rng = mulberry32(0xc0de);
  for (let trial = 0; trial < 200; trial++) {
    const k = 1 + Math.floor(rng() * 300);
    const count = 1 + Math.floor(rng() * 800);
    const vMin = -Math.floor(rng() * 50);
    const cum = randomCum(rng, count, k, trial % 3 === 0);
    const symbols = new Float64Array(count);
    for (let i = 0; i < count; i++) {
      symbols[i] = vMin + Math.floor(rng() * k);
    }
    const stream = encodePlane(symbols, vMin, cum, k);
    const back = decodePlane(stream, count, vMin, cum, k);
    expect(back).toEqual(symbols);
  }
});

test("single-letter alphabet costs only framing", () => {
  const count = 5000;
  const cum = new Uint32Array(count * 2);
  for (let i = 0; i < count; i++) {
    cum[2 * i + 1] = 65536;
  }
  const symbols = new Float64Array(count).fill(7);
  const stream = encodePlane(symbols, 7, cum, 1);
  expect(stream.length).toBe(5);
  expect(decodePlane(stream, count, 7, cum, 1)).toEqual(symbols);
});

test("truncated streams are rejected", () => {
  const rng = mulberry32(0xbad);
  const count = 2000;
  const cum = randomCum(rng, count, 17, false);
  const symbols = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    symbols[i] = Math.floor(rng() * 17);
  }
  const stream = encodePlane(symbols, 0, cum, 17);
  expect(() => decodePlane(stream.subarray(0, 4), count, 0, cum, 17)).toThrow(CorruptStreamError);
  expect(() => decodePlane(stream.subarray(0, 5), count, 0, cum, 17)).toThrow(CorruptStreamError);
  expect(() => decodePlane(stream.subarray(0, stream.length >> 1), count, 0, cum, 17)).toThrow(
    CorruptStreamError
  );
});
