/**
 * Request loop: single-threaded, one line in, one line out, responses
 * flushed immediately. Errors answer with ok=false and the loop keeps
 * going; only EOF on stdin ends the process.
 */

import { createInterface } from "node:readline";

import {
  decodeImagePayload,
  encodeResponse,
  parseRequest,
  ProtocolError,
  requestId,
  type Request,
  type Response,
} from "./protocol.js";
import { encodeImage, encodeText, OUTPUT_DIM } from "./encoder.js";

export interface ModelDescriptor {
  readonly name: string;
  readonly output_dim: number;
  readonly preprocessing: string;
}

const MODELS: Record<string, ModelDescriptor> = {
  "mini-512": {
    name: "mini-512",
    output_dim: OUTPUT_DIM,
    preprocessing: "values scaled from 0..255, concept pooling over all pixels",
  },
};

export function loadModel(name: string): ModelDescriptor {
  const model = MODELS[name];
  if (!model) {
    throw new Error(
      `unknown model ${JSON.stringify(name)}; available: ${Object.keys(MODELS).join(", ")}`,
    );
  }
  return model;
}

export interface ServerState {
  readonly model: ModelDescriptor;
  requestCount: number;
}

export function handleRequest(state: ServerState, request: Request): Response {
  state.requestCount += 1;
  const id = request.id;
  try {
    switch (request.op) {
      case "describe":
        return {
          id,
          ok: true,
          output_dim: state.model.output_dim,
          supports_randomization: false,
          model: state.model.name,
          preprocessing: state.model.preprocessing,
        };
      case "embed_text": {
        if (typeof request.text !== "string") {
          return { id, ok: false, error: "embed_text needs a text field" };
        }
        return { id, ok: true, embedding: Array.from(encodeText(request.text)) };
      }
      case "embed_image": {
        const image = decodeImagePayload(request.shape, request.data);
        return {
          id,
          ok: true,
          embedding: Array.from(encodeImage(image.values, image.channels)),
        };
      }
      case "randomize":
        return { id, ok: false, error: "randomize is not supported: weights are fixed" };
    }
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return { id, ok: false, error: message };
  }
}

export async function serveLoop(
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
  state: ServerState,
): Promise<void> {
  const lines = createInterface({ input, crlfDelay: Infinity });
  for await (const line of lines) {
    if (line.trim() === "") continue;
    let response: Response;
    try {
      response = handleRequest(state, parseRequest(line));
    } catch (err) {
      if (!(err instanceof ProtocolError)) throw err;
      let parsed: unknown = null;
      try {
        parsed = JSON.parse(line);
      } catch {
        // not json at all; respond with id -1
      }
      response = { id: requestId(parsed), ok: false, error: err.message };
    }
    output.write(encodeResponse(response));
  }
}
