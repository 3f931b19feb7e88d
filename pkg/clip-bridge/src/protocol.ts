/**
 * Wire protocol shared with the dexp bridge client.
 *
 * One JSON object per line on stdin/stdout. Requests carry an integer
 * id that the matching response echoes back, error responses included:
 *
 *   → {"id": 0, "op": "describe"}
 *   ← {"id": 0, "ok": true, "output_dim": 512, "supports_randomization": false}
 *   → {"id": 1, "op": "embed_image", "shape": [H, W, C], "data": "<base64>"}
 *   ← {"id": 1, "ok": true, "embedding": [...]}
 *   → {"id": 2, "op": "embed_text", "text": "a small dog"}
 *   ← {"id": 2, "ok": true, "embedding": [...]}
 *
 * Image payloads are little-endian float32, row-major [H, W, C].
 */

export const OPS = ["describe", "embed_image", "embed_text", "randomize"] as const;
export type Op = (typeof OPS)[number];

export interface Request {
  id: number;
  op: Op;
  shape?: [number, number, number];
  data?: string;
  text?: string;
  scheme?: string;
  k?: number;
  seed?: number;
}

export interface OkResponse {
  id: number;
  ok: true;
  embedding?: number[];
  output_dim?: number;
  supports_randomization?: boolean;
  model?: string;
  preprocessing?: string;
}

export interface ErrResponse {
  id: number;
  ok: false;
  error: string;
}

export type Response = OkResponse | ErrResponse;

export class ProtocolError extends Error {}

function isPlainObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

/** Pull a usable response id out of anything, -1 when there is none. */
export function requestId(value: unknown): number {
  if (isPlainObject(value) && typeof value.id === "number"
      && Number.isInteger(value.id) && value.id >= 0) {
    return value.id;
  }
  return -1;
}

export function parseRequest(line: string): Request {
  let value: unknown;
  try {
    value = JSON.parse(line);
  } catch {
    throw new ProtocolError("request is not json");
  }
  if (!isPlainObject(value)) {
    throw new ProtocolError("request must be a json object");
  }
  if (requestId(value) < 0) {
    throw new ProtocolError("id must be a non-negative integer");
  }
  if (typeof value.op !== "string" || !(OPS as readonly string[]).includes(value.op)) {
    throw new ProtocolError(`unknown op ${JSON.stringify(value.op)}`);
  }
  return value as unknown as Request;
}

export function encodeResponse(response: Response): string {
  return JSON.stringify(response) + "\n";
}

/** Decode a base64 little-endian float32 payload into (shape, values). */
export function decodeImagePayload(
  shape: unknown,
  data: unknown,
): { height: number; width: number; channels: number; values: Float64Array } {
  if (!Array.isArray(shape) || shape.length !== 3
      || !shape.every((d) => Number.isInteger(d) && d >= 1)) {
    throw new ProtocolError("shape must be three positive integers [H, W, C]");
  }
  const [height, width, channels] = shape as [number, number, number];
  if (typeof data !== "string") {
    throw new ProtocolError("data must be a base64 string");
  }
  const buf = Buffer.from(data, "base64");
  const expected = 4 * height * width * channels;
  if (buf.length !== expected) {
    throw new ProtocolError(
      `payload is ${buf.length} bytes, shape [${height}, ${width}, ${channels}] needs ${expected}`,
    );
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const values = new Float64Array(height * width * channels);
  for (let i = 0; i < values.length; i++) {
    const v = view.getFloat32(i * 4, true);
    if (!Number.isFinite(v)) {
      throw new ProtocolError(`payload value at index ${i} is not finite`);
    }
    values[i] = v;
  }
  return { height, width, channels, values };
}
