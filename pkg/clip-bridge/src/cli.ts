#!/usr/bin/env node
/**
 * clip-bridge --model <name>
 *
 * Serves the bridge protocol on stdin/stdout until EOF. Diagnostics go
 * to stderr so stdout stays a clean response stream.
 */

import { loadModel, serveLoop, type ServerState } from "./server.js";

function parseArgs(argv: string[]): { model: string } {
  let model = "mini-512";
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--model") {
      const value = argv[++i];
      if (!value) {
        throw new Error("--model needs a value");
      }
      model = value;
    } else if (arg === "--help" || arg === "-h") {
      process.stderr.write("usage: clip-bridge [--model <name>]\n");
      process.exit(0);
    } else {
      throw new Error(`unknown argument ${JSON.stringify(arg)}`);
    }
  }
  return { model };
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const model = loadModel(args.model);
  const state: ServerState = { model, requestCount: 0 };
  process.stderr.write(
    `clip-bridge: serving ${model.name} (${model.output_dim}-d) on stdio\n`,
  );
  await serveLoop(process.stdin, process.stdout, state);
}

main().catch((err) => {
  const message = err instanceof Error ? err.message : String(err);
  process.stderr.write(`clip-bridge: ${message}\n`);
  process.exit(1);
});
