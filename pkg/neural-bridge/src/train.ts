/** Adam training loop with the loss restricted to the predicted area. */
import * as fs from "node:fs";
import * as path from "node:path";

import { AREA_OFF, AREA, CROP, Sample, loadSample, toChannels } from "./format";
import {
  ForwardCache, Net, NetConfig, Params, TOY_CONFIG, areaMask,
  maskedBceWithLogits, saveCheckpoint, zerosLike,
} from "./model";
import { Rng, mix } from "./rng";

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  lr: number;
  weightDecay: number;
  seed: number;
  augment: boolean;
  net: NetConfig;
  curveFile?: string;
  log: (msg: string) => void;
}

export const TOY_TRAIN: TrainOptions = {
  epochs: 10,
  batchSize: 16,
  lr: 1e-3,
  weightDecay: 3e-5,
  seed: 0,
  augment: true,
  net: TOY_CONFIG,
  log: console.error,
};

export class TrainingDiverged extends Error {}

interface Adam {
  m: Params;
  v: Params;
  t: number;
}

function adamStep(net: Net, grads: Params, state: Adam, lr: number, wd: number): void {
  state.t += 1;
  const b1 = 0.9;
  const b2 = 0.999;
  const eps = 1e-8;
  const c1 = 1 - Math.pow(b1, state.t);
  const c2 = 1 - Math.pow(b2, state.t);
  for (const k of Object.keys(net.params)) {
    const p = net.params[k];
    const g = grads[k];
    const m = state.m[k];
    const v = state.v[k];
    const decay = k.endsWith(".w") ? wd : 0; // biases are not decayed
    for (let i = 0; i < p.length; i++) {
      const gi = g[i] + decay * p[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      p[i] -= (lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + eps);
    }
  }
}

function flipSample(s: Sample, horizontal: boolean, vertical: boolean): Sample {
  if (!horizontal && !vertical) return s;
  const mapCrop = new Uint8Array(CROP * CROP);
  const target = new Uint8Array(CROP * CROP);
  for (let r = 0; r < CROP; r++) {
    const rr = vertical ? CROP - 1 - r : r;
    for (let c = 0; c < CROP; c++) {
      const cc = horizontal ? CROP - 1 - c : c;
      mapCrop[r * CROP + c] = s.mapCrop[rr * CROP + cc];
      target[r * CROP + c] = s.target[rr * CROP + cc];
    }
  }
  return { mapCrop, target };
}

export interface Dataset {
  train: string[];
  val: string[];
  test: string[];
  dir: string;
}

export function openDataset(dir: string): Dataset {
  const meta = JSON.parse(fs.readFileSync(path.join(dir, "meta.json"), "utf8"));
  const full = (names: string[]) => names.map((n) => path.join(dir, "samples", n));
  return { train: full(meta.splits.train), val: full(meta.splits.val),
           test: full(meta.splits.test), dir };
}

/** Mean predicted-area BCE over a list of sample files (no dropout). */
export function evaluateLoss(net: Net, files: string[]): number {
  const mask = areaMask(net.cfg.inputSize);
  let total = 0;
  for (const f of files) {
    const s = loadSample(f);
    const logits = net.forward(toChannels(s.mapCrop), null);
    total += maskedBceWithLogits(logits, s.target, mask);
  }
  return total / files.length;
}

export function train(dataset: Dataset, opts: TrainOptions = TOY_TRAIN): Net {
  if (!dataset.train.length) throw new Error("empty training split");
  const net = Net.fresh(opts.net, opts.seed);
  const state: Adam = { m: zerosLike(net.params), v: zerosLike(net.params), t: 0 };
  const mask = areaMask(net.cfg.inputSize);
  const rng = new Rng(mix(opts.seed, 0x7a17));
  const curve: string[] = ["epoch,train_bce,val_bce"];

  const initial = evaluateLoss(net, dataset.train);
  const initialVal = dataset.val.length ? evaluateLoss(net, dataset.val) : NaN;
  opts.log(`epoch 0: train ${initial.toFixed(4)} val ${initialVal.toFixed(4)}`);
  curve.push(`0,${initial},${initialVal}`);

  for (let epoch = 1; epoch <= opts.epochs; epoch++) {
    const order = rng.shuffle([...dataset.train]);
    let epochLoss = 0;
    let seen = 0;
    for (let b = 0; b < order.length; b += opts.batchSize) {
      const files = order.slice(b, b + opts.batchSize);
      const grads = zerosLike(net.params);
      let batchLoss = 0;
      for (const f of files) {
        let s = loadSample(f);
        if (opts.augment) {
          s = flipSample(s, rng.next() < 0.5, rng.next() < 0.5);
        }
        const cache = {} as ForwardCache;
        const logits = net.forward(toChannels(s.mapCrop), mix(opts.seed, state.t * 7919 + seen), cache);
        const g = new Float64Array(logits.length);
        batchLoss += maskedBceWithLogits(logits, s.target, mask, g);
        // average over the batch
        for (let i = 0; i < g.length; i++) g[i] /= files.length;
        net.backward(cache, g, grads);
        seen += 1;
      }
      batchLoss /= files.length;
      if (!Number.isFinite(batchLoss)) {
        throw new TrainingDiverged(`non-finite loss at epoch ${epoch}`);
      }
      epochLoss += batchLoss * files.length;
      adamStep(net, grads, state, opts.lr, opts.weightDecay);
    }
    const valLoss = dataset.val.length ? evaluateLoss(net, dataset.val) : NaN;
    opts.log(`epoch ${epoch}: train ${(epochLoss / order.length).toFixed(4)} `
      + `val ${valLoss.toFixed(4)}`);
    curve.push(`${epoch},${epochLoss / order.length},${valLoss}`);
  }
  if (opts.curveFile) fs.writeFileSync(opts.curveFile, curve.join("\n") + "\n");
  return net;
}

/** Segmentation-style test metrics at threshold 0.5 over the predicted
 * area (reported for information; no accuracy target at toy scale). */
export function evaluateSegmentation(net: Net, files: string[]) {
  let tp = 0, fp = 0, tn = 0, fn = 0;
  for (const f of files) {
    const s = loadSample(f);
    const logits = net.forward(toChannels(s.mapCrop), null);
    for (let r = AREA_OFF; r < AREA_OFF + AREA; r++) {
      for (let c = AREA_OFF; c < AREA_OFF + AREA; c++) {
        const i = r * CROP + c;
        const pred = logits[i] > 0 ? 1 : 0;
        const t = s.target[i];
        if (pred && t) tp++;
        else if (pred && !t) fp++;
        else if (!pred && !t) tn++;
        else fn++;
      }
    }
  }
  const precision = tp + fp ? tp / (tp + fp) : 0;
  const recall = tp + fn ? tp / (tp + fn) : 0;
  return {
    accuracy: (tp + tn) / (tp + tn + fp + fn),
    precision,
    recall,
    f1: precision + recall ? (2 * precision * recall) / (precision + recall) : 0,
    iou: tp + fp + fn ? tp / (tp + fp + fn) : 0,
  };
}
