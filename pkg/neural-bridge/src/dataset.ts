/** Training-sample export from exploration-run artifacts.
 *
 * A run directory (as written by the simulator's experiment runner with
 * snapshot logging enabled) holds config.json, worlds/w<i>.txt and
 * trials/*.json; every (snapshot, frontier centroid) pair becomes one
 * sample file pairing the partial-map crop with the hidden world's
 * occupancy in the same window.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import {
  Sample, World, cropSnapshot, cropWorld, encodeSample, listTrials,
  loadTrial, loadWorld,
} from "./format";

export interface ExportOptions {
  ratios: [number, number, number]; // train/val/test
  splitBy: "world" | "sample";
}

export const DEFAULT_EXPORT: ExportOptions = {
  ratios: [0.9, 0.05, 0.05],
  splitBy: "world",
};

export interface SampleRef {
  file: string;
  world: number;
  trial: number;
  step: number;
  frontier: number;
}

export interface Meta {
  samples: SampleRef[];
  splits: { train: string[]; val: string[]; test: string[] };
  ratios: [number, number, number];
  split_by: string;
}

export function exportDataset(runDir: string, outDir: string,
                              opts: ExportOptions = DEFAULT_EXPORT,
                              warn: (msg: string) => void = console.error): Meta {
  fs.mkdirSync(path.join(outDir, "samples"), { recursive: true });
  const worlds = new Map<number, World>();
  const refs: SampleRef[] = [];
  for (const trialFile of listTrials(runDir)) {
    const rec = loadTrial(trialFile);
    if (rec.error !== null || !rec.result) continue;
    const snaps = rec.result.snapshots ?? [];
    if (!snaps.length) continue;
    if (!worlds.has(rec.world_idx)) {
      const wfile = path.join(runDir, "worlds", `w${rec.world_idx}.txt`);
      if (!fs.existsSync(wfile)) {
        warn(`skipping ${path.basename(trialFile)}: missing world file ${wfile}`);
        continue;
      }
      worlds.set(rec.world_idx, loadWorld(wfile));
    }
    const world = worlds.get(rec.world_idx)!;
    for (const snap of snaps) {
      snap.frontiers.forEach(([r, c], fid) => {
        const sample: Sample = {
          mapCrop: cropSnapshot(snap.map, r, c),
          target: cropWorld(world, r, c),
        };
        const name = `sample_w${rec.world_idx}_${rec.metric}_t${rec.trial}_s${snap.step}_f${fid}.bin`;
        fs.writeFileSync(path.join(outDir, "samples", name), encodeSample(sample));
        refs.push({ file: name, world: rec.world_idx, trial: rec.trial,
                    step: snap.step, frontier: fid });
      });
    }
  }
  refs.sort((a, b) => a.file.localeCompare(b.file));
  const meta: Meta = {
    samples: refs,
    splits: split(refs, opts),
    ratios: opts.ratios,
    split_by: opts.splitBy,
  };
  fs.writeFileSync(path.join(outDir, "meta.json"), JSON.stringify(meta, null, 1));
  return meta;
}

function split(refs: SampleRef[], opts: ExportOptions): Meta["splits"] {
  const [rTrain, rVal] = opts.ratios;
  const n = refs.length;
  if (opts.splitBy === "sample") {
    // exact counts (within one sample of the requested ratios)
    const nTrain = Math.round(n * rTrain);
    const nVal = Math.round(n * rVal);
    return {
      train: refs.slice(0, nTrain).map((r) => r.file),
      val: refs.slice(nTrain, nTrain + nVal).map((r) => r.file),
      test: refs.slice(nTrain + nVal).map((r) => r.file),
    };
  }
  // whole worlds per split: no leakage between train and evaluation;
  // boundaries land on world borders nearest the requested ratios
  const byWorld = new Map<number, string[]>();
  for (const r of refs) {
    if (!byWorld.has(r.world)) byWorld.set(r.world, []);
    byWorld.get(r.world)!.push(r.file);
  }
  const worldIds = [...byWorld.keys()].sort((a, b) => a - b);
  const splits: Meta["splits"] = { train: [], val: [], test: [] };
  let used = 0;
  for (const wid of worldIds) {
    const files = byWorld.get(wid)!;
    const fracDone = used / n;
    let bucket: keyof Meta["splits"];
    if (fracDone < rTrain || worldIds.length < 3) bucket = "train";
    else if (fracDone < rTrain + rVal || splits.val.length === 0) bucket = "val";
    else bucket = "test";
    splits[bucket].push(...files);
    used += files.length;
  }
  if (!splits.val.length && splits.train.length > 1) {
    splits.val.push(splits.train.pop()!);
  }
  if (!splits.test.length && splits.train.length > 1) {
    splits.test.push(splits.train.pop()!);
  }
  return splits;
}
