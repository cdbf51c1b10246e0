/** World/trial parsing, crop extraction and the on-disk sample codec.
 *
 * A training sample pairs a 256x256 crop of a partially explored map
 * (trinary: free/occupied/unknown) with the ground-truth occupancy of the
 * same window. Only the centered 80x80 area is scored during training.
 */
import * as fs from "node:fs";
import * as path from "node:path";

export const CROP = 256;
export const AREA = 80;
export const AREA_OFF = (CROP - AREA) / 2; // 88

export const FREE = 0;
export const OCC = 1;
export const UNKNOWN = 2;

export interface World {
  width: number;
  height: number;
  resolution: number;
  cells: Uint8Array; // row-major, 1 = occupied
}

export function parseWorld(text: string): World {
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  const head = lines[0].split(/\s+/);
  if (head[0] !== "ogm-world" || head.length !== 4) {
    throw new Error(`bad world header: ${lines[0]}`);
  }
  const width = parseInt(head[1], 10);
  const height = parseInt(head[2], 10);
  const resolution = parseFloat(head[3]);
  if (lines.length - 1 !== height) {
    throw new Error(`expected ${height} raster lines, got ${lines.length - 1}`);
  }
  const cells = new Uint8Array(width * height);
  for (let r = 0; r < height; r++) {
    const row = lines[r + 1];
    if (row.length !== width) throw new Error(`bad raster line ${r + 2}`);
    for (let c = 0; c < width; c++) {
      if (row[c] === "#") cells[r * width + c] = 1;
      else if (row[c] !== ".") throw new Error(`bad char '${row[c]}' line ${r + 2}`);
    }
  }
  return { width, height, resolution, cells };
}

export function loadWorld(file: string): World {
  return parseWorld(fs.readFileSync(file, "utf8"));
}

export interface Snapshot {
  step: number;
  map: string[]; // rows of '#', '.', '?'
  frontiers: number[][]; // [row, col] centroids
}

export interface TrialRecord {
  world: string;
  world_idx: number;
  metric: string;
  trial: number;
  seed: number;
  result: { snapshots?: Snapshot[] } | null;
  error: string | null;
}

export function loadTrial(file: string): TrialRecord {
  return JSON.parse(fs.readFileSync(file, "utf8"));
}

/** Trinary 256x256 crop of a snapshot raster centered on a cell;
 * off-map regions read as unknown. */
export function cropSnapshot(rows: string[], centerR: number, centerC: number): Uint8Array {
  const h = rows.length;
  const w = rows[0].length;
  const out = new Uint8Array(CROP * CROP).fill(UNKNOWN);
  const r0 = centerR - CROP / 2;
  const c0 = centerC - CROP / 2;
  for (let r = Math.max(r0, 0); r < Math.min(r0 + CROP, h); r++) {
    const row = rows[r];
    for (let c = Math.max(c0, 0); c < Math.min(c0 + CROP, w); c++) {
      const ch = row[c];
      out[(r - r0) * CROP + (c - c0)] = ch === "#" ? OCC : ch === "." ? FREE : UNKNOWN;
    }
  }
  return out;
}

/** Binary occupancy crop of the hidden world; everything outside the
 * closed border is solid, so off-map cells pad as occupied. */
export function cropWorld(world: World, centerR: number, centerC: number): Uint8Array {
  const out = new Uint8Array(CROP * CROP).fill(1);
  const r0 = centerR - CROP / 2;
  const c0 = centerC - CROP / 2;
  for (let r = Math.max(r0, 0); r < Math.min(r0 + CROP, world.height); r++) {
    for (let c = Math.max(c0, 0); c < Math.min(c0 + CROP, world.width); c++) {
      out[(r - r0) * CROP + (c - c0)] = world.cells[r * world.width + c];
    }
  }
  return out;
}

export interface Sample {
  mapCrop: Uint8Array; // trinary
  target: Uint8Array; // binary occupancy
}

export function encodeSample(s: Sample): Buffer {
  const buf = Buffer.alloc(2 * CROP * CROP);
  buf.set(s.mapCrop, 0);
  buf.set(s.target, CROP * CROP);
  return buf;
}

export function decodeSample(buf: Buffer): Sample {
  if (buf.length !== 2 * CROP * CROP) {
    throw new Error(`bad sample record: ${buf.length} bytes`);
  }
  return {
    mapCrop: new Uint8Array(buf.subarray(0, CROP * CROP)),
    target: new Uint8Array(buf.subarray(CROP * CROP)),
  };
}

export function loadSample(file: string): Sample {
  return decodeSample(fs.readFileSync(file));
}

/** Model/wire input: free, occupied, unknown masks plus the centered
 * 80x80 predicted-area mask, channel-minor (NHWC with C=4). */
export function toChannels(mapCrop: Uint8Array): Float64Array {
  const x = new Float64Array(CROP * CROP * 4);
  for (let i = 0; i < CROP * CROP; i++) {
    const v = mapCrop[i];
    x[i * 4 + 0] = v === FREE ? 1 : 0;
    x[i * 4 + 1] = v === OCC ? 1 : 0;
    x[i * 4 + 2] = v === UNKNOWN ? 1 : 0;
  }
  for (let r = AREA_OFF; r < AREA_OFF + AREA; r++) {
    for (let c = AREA_OFF; c < AREA_OFF + AREA; c++) {
      x[(r * CROP + c) * 4 + 3] = 1;
    }
  }
  return x;
}

/** Wire crop [4][256][256] (channel-major) -> NHWC Float64Array. */
export function wireCropToChannels(crop: number[][][]): Float64Array {
  if (crop.length !== 4 || crop[0].length !== CROP || crop[0][0].length !== CROP) {
    throw new Error("crop must be [4][256][256]");
  }
  const x = new Float64Array(CROP * CROP * 4);
  for (let ch = 0; ch < 4; ch++) {
    const plane = crop[ch];
    for (let r = 0; r < CROP; r++) {
      const row = plane[r];
      for (let c = 0; c < CROP; c++) {
        x[(r * CROP + c) * 4 + ch] = row[c];
      }
    }
  }
  return x;
}

export function listTrials(runDir: string): string[] {
  const dir = path.join(runDir, "trials");
  return fs
    .readdirSync(dir)
    .filter((f) => f.endsWith(".json"))
    .sort()
    .map((f) => path.join(dir, f));
}
