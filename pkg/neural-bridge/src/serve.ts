/** Stdio inference server: one JSON request per line in, one response out.
 *
 * request  {"id": int, "seed": int, "n_samples": int, "crop": [4][256][256]}
 * response {"id": int, "samples": [n][80][80]} | {"id": int, "error": str}
 *
 * Malformed requests are answered with an error echoing the id (when one
 * can be recovered) and the server keeps running. Monte-Carlo dropout is
 * active for every sample, seeded from the request's seed field.
 */
import { createInterface } from "node:readline";

import { wireCropToChannels } from "./format";
import { Net, predictArea } from "./model";

export function handleRequest(net: Net, line: string): object {
  let id: unknown = null;
  try {
    const req = JSON.parse(line);
    id = req.id ?? null;
    if (!Number.isInteger(req.id)) throw new Error("missing integer 'id'");
    if (!Number.isInteger(req.seed)) throw new Error("missing integer 'seed'");
    if (!Number.isInteger(req.n_samples) || req.n_samples < 1) {
      throw new Error("'n_samples' must be a positive integer");
    }
    if (!Array.isArray(req.crop)) throw new Error("missing 'crop'");
    const x = wireCropToChannels(req.crop);
    const samples = predictArea(net, x, req.n_samples, req.seed >>> 0);
    return { id: req.id, samples };
  } catch (e) {
    return { id, error: e instanceof Error ? e.message : String(e) };
  }
}

export async function serve(net: Net): Promise<void> {
  const rl = createInterface({ input: process.stdin });
  for await (const line of rl) {
    if (!line.trim()) continue;
    process.stdout.write(JSON.stringify(handleRequest(net, line)) + "\n");
  }
}
