/**
 * Deterministic dual encoder into a shared 512-dimensional space.
 *
 * Words map to pseudo-random unit-scale vectors derived from SHA-256,
 * so the text side is a normalized bag of token vectors. The image side
 * scores a small vocabulary of visual concepts (colors, brightness) and
 * mixes the concept words' vectors by activation. Captions naming what
 * is visible therefore land near the image; everything is a pure
 * function of the inputs, byte-for-byte reproducible across runs.
 */

import { createHash } from "node:crypto";

export const OUTPUT_DIM = 512;

const textVectorCache = new Map<string, Float64Array>();

/** Pseudo-random vector for one token, components uniform in [-1, 1). */
export function tokenVector(token: string): Float64Array {
  const cached = textVectorCache.get(token);
  if (cached) return cached;
  const out = new Float64Array(OUTPUT_DIM);
  for (let block = 0; block * 8 < OUTPUT_DIM; block++) {
    const digest = createHash("sha256")
      .update(token, "utf8")
      .update(Buffer.from([0, block]))
      .digest();
    for (let j = 0; j < 8; j++) {
      out[block * 8 + j] = digest.readUInt32LE(j * 4) / 2 ** 31 - 1;
    }
  }
  textVectorCache.set(token, out);
  return out;
}

export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
}

function normalized(v: Float64Array): Float64Array | null {
  let sq = 0;
  for (const x of v) sq += x * x;
  if (sq === 0) return null;
  const inv = 1 / Math.sqrt(sq);
  return v.map((x) => x * inv);
}

function addScaled(into: Float64Array, v: Float64Array, scale: number): void {
  for (let i = 0; i < into.length; i++) {
    into[i] = (into[i] as number) + scale * (v[i] as number);
  }
}

export function encodeText(text: string): Float64Array {
  const tokens = tokenize(text);
  if (tokens.length === 0) {
    throw new Error("caption has no tokens");
  }
  const sum = new Float64Array(OUTPUT_DIM);
  for (const token of tokens) addScaled(sum, tokenVector(token), 1);
  const unit = normalized(sum);
  if (unit === null) {
    // sha-derived vectors cancelling exactly is not reachable in practice
    throw new Error("caption tokens cancel to a zero vector");
  }
  return unit;
}

/** Visual concepts with the caption words each one answers to. */
const CONCEPTS: { name: string; words: string[] }[] = [
  { name: "bright", words: ["bright", "white", "light"] },
  { name: "dark", words: ["dark", "black"] },
  { name: "red", words: ["red"] },
  { name: "green", words: ["green"] },
  { name: "blue", words: ["blue"] },
  { name: "yellow", words: ["yellow"] },
];

const conceptVectors: Float64Array[] = CONCEPTS.map((concept) => {
  const sum = new Float64Array(OUTPUT_DIM);
  for (const word of concept.words) addScaled(sum, tokenVector(word), 1);
  const unit = normalized(sum);
  if (unit === null) throw new Error(`degenerate concept ${concept.name}`);
  return unit;
});

// tokenize() can never produce "#anchor", so captions cannot address it;
// it only keeps all-zero images away from the zero vector
const anchorVector = normalized(tokenVector("#anchor")) as Float64Array;
const ANCHOR_WEIGHT = 0.05;

/**
 * Concept activations for an image given as row-major [H, W, C] values
 * in the 0..255 range, C of 1 or 3. Order matches CONCEPTS.
 */
export function conceptActivations(
  values: Float64Array,
  channels: number,
): number[] {
  if (channels !== 1 && channels !== 3) {
    throw new Error(`images must have 1 or 3 channels, got ${channels}`);
  }
  const pixels = values.length / channels;
  const clamp01 = (x: number) => (x < 0 ? 0 : x > 1 ? 1 : x);
  let brightness = 0;
  let red = 0;
  let green = 0;
  let blue = 0;
  let yellow = 0;
  for (let p = 0; p < pixels; p++) {
    if (channels === 1) {
      brightness += clamp01((values[p] as number) / 255);
      continue;
    }
    const r = clamp01((values[3 * p] as number) / 255);
    const g = clamp01((values[3 * p + 1] as number) / 255);
    const b = clamp01((values[3 * p + 2] as number) / 255);
    brightness += 0.2126 * r + 0.7152 * g + 0.0722 * b;
    red += Math.max(0, r - (g + b) / 2);
    green += Math.max(0, g - (r + b) / 2);
    blue += Math.max(0, b - (r + g) / 2);
    yellow += Math.max(0, (r + g) / 2 - b);
  }
  brightness /= pixels;
  return [
    brightness,
    1 - brightness,
    clamp01((2 * red) / pixels),
    clamp01((2 * green) / pixels),
    clamp01((2 * blue) / pixels),
    clamp01((2 * yellow) / pixels),
  ];
}

export function encodeImage(values: Float64Array, channels: number): Float64Array {
  const activations = conceptActivations(values, channels);
  const sum = new Float64Array(OUTPUT_DIM);
  activations.forEach((a, i) => addScaled(sum, conceptVectors[i] as Float64Array, a));
  addScaled(sum, anchorVector, ANCHOR_WEIGHT);
  const unit = normalized(sum);
  if (unit === null) {
    throw new Error("image embedding collapsed to zero");
  }
  return unit;
}
