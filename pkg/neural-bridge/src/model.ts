/** Encoder-decoder occupancy-completion network on flat Float64Arrays.
 *
 * Layout is NHWC with a single image per pass (batching is a loop with
 * gradient accumulation). The input is average-pooled down by `scale`
 * before the encoder and the 1-channel logits are nearest-upsampled back,
 * so compute stays desk-sized while the wire format keeps full resolution.
 * Dropout sits after every decoder convolution and stays active at
 * inference when a dropout seed is supplied (Monte-Carlo sampling).
 */
import * as fs from "node:fs";

import { Rng, mix } from "./rng";
import { AREA, AREA_OFF, CROP } from "./format";

export interface NetConfig {
  inputSize: number; // square input edge (wire: 256)
  scale: number; // integer downsample factor before the encoder
  widths: [number, number, number]; // encoder channel widths
  bottleneck: number;
  dropout: number;
}

export const TOY_CONFIG: NetConfig = {
  inputSize: CROP,
  scale: 4,
  widths: [8, 16, 32],
  bottleneck: 64,
  dropout: 0.2,
};

interface ConvSpec {
  name: string;
  k: number; // kernel edge (1 or 3)
  ci: number;
  co: number;
}

function convSpecs(cfg: NetConfig): ConvSpec[] {
  const [w1, w2, w3] = cfg.widths;
  const bn = cfg.bottleneck;
  return [
    { name: "enc1", k: 3, ci: 4, co: w1 },
    { name: "enc2", k: 3, ci: w1, co: w2 },
    { name: "enc3", k: 3, ci: w2, co: w3 },
    { name: "bneck", k: 3, ci: w3, co: bn },
    { name: "dec3a", k: 1, ci: bn + w3, co: w3 },
    { name: "dec3b", k: 3, ci: w3, co: w3 },
    { name: "dec2a", k: 1, ci: w3 + w2, co: w2 },
    { name: "dec2b", k: 3, ci: w2, co: w2 },
    { name: "dec1a", k: 1, ci: w2 + w1, co: w1 },
    { name: "dec1b", k: 3, ci: w1, co: w1 },
    { name: "head", k: 1, ci: w1, co: 1 },
  ];
}

export interface Params {
  [name: string]: Float64Array;
}

export function initParams(cfg: NetConfig, seed: number): Params {
  const rng = new Rng(mix(seed, 0x5eed));
  const p: Params = {};
  for (const s of convSpecs(cfg)) {
    const w = new Float64Array(s.k * s.k * s.ci * s.co);
    const std = Math.sqrt(2.0 / (s.k * s.k * s.ci));
    for (let i = 0; i < w.length; i++) w[i] = rng.gauss() * std;
    p[`${s.name}.w`] = w;
    p[`${s.name}.b`] = new Float64Array(s.co);
  }
  return p;
}

export function zerosLike(p: Params): Params {
  const out: Params = {};
  for (const k of Object.keys(p)) out[k] = new Float64Array(p[k].length);
  return out;
}

// --- primitive ops (forward + explicit backward) ---------------------------

function conv(
  inp: Float64Array, h: number, w: number, ci: number, co: number, k: number,
  weight: Float64Array, bias: Float64Array, out: Float64Array,
): void {
  const r = (k - 1) >> 1;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const o0 = (y * w + x) * co;
      for (let c = 0; c < co; c++) out[o0 + c] = bias[c];
    }
  }
  for (let ky = 0; ky < k; ky++) {
    for (let kx = 0; kx < k; kx++) {
      const w0 = (ky * k + kx) * ci * co;
      const dy = ky - r;
      const dx = kx - r;
      for (let y = Math.max(0, -dy); y < Math.min(h, h - dy); y++) {
        const yy = y + dy;
        for (let x = Math.max(0, -dx); x < Math.min(w, w - dx); x++) {
          const i0 = (yy * w + (x + dx)) * ci;
          const o0 = (y * w + x) * co;
          for (let c = 0; c < ci; c++) {
            const v = inp[i0 + c];
            if (v === 0) continue;
            const wb = w0 + c * co;
            for (let d = 0; d < co; d++) out[o0 + d] += v * weight[wb + d];
          }
        }
      }
    }
  }
}

function convBackward(
  inp: Float64Array, h: number, w: number, ci: number, co: number, k: number,
  weight: Float64Array, gOut: Float64Array,
  gInp: Float64Array, gW: Float64Array, gB: Float64Array,
): void {
  const r = (k - 1) >> 1;
  for (let i = 0; i < gOut.length; i += co) {
    for (let c = 0; c < co; c++) gB[c] += gOut[i + c];
  }
  for (let ky = 0; ky < k; ky++) {
    for (let kx = 0; kx < k; kx++) {
      const w0 = (ky * k + kx) * ci * co;
      const dy = ky - r;
      const dx = kx - r;
      for (let y = Math.max(0, -dy); y < Math.min(h, h - dy); y++) {
        const yy = y + dy;
        for (let x = Math.max(0, -dx); x < Math.min(w, w - dx); x++) {
          const i0 = (yy * w + (x + dx)) * ci;
          const o0 = (y * w + x) * co;
          for (let c = 0; c < ci; c++) {
            const v = inp[i0 + c];
            const wb = w0 + c * co;
            let acc = 0.0;
            for (let d = 0; d < co; d++) {
              const g = gOut[o0 + d];
              acc += g * weight[wb + d];
              gW[wb + d] += g * v;
            }
            gInp[i0 + c] += acc;
          }
        }
      }
    }
  }
}

function reluInPlace(a: Float64Array): Uint8Array {
  const mask = new Uint8Array(a.length);
  for (let i = 0; i < a.length; i++) {
    if (a[i] > 0) mask[i] = 1;
    else a[i] = 0;
  }
  return mask;
}

function reluBackward(g: Float64Array, mask: Uint8Array): void {
  for (let i = 0; i < g.length; i++) if (!mask[i]) g[i] = 0;
}

function maxPool2(inp: Float64Array, h: number, w: number, c: number) {
  const oh = h >> 1;
  const ow = w >> 1;
  const out = new Float64Array(oh * ow * c);
  const argmax = new Int32Array(oh * ow * c);
  for (let y = 0; y < oh; y++) {
    for (let x = 0; x < ow; x++) {
      for (let ch = 0; ch < c; ch++) {
        let best = -Infinity;
        let bi = 0;
        for (let dy = 0; dy < 2; dy++) {
          for (let dx = 0; dx < 2; dx++) {
            const idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
            if (inp[idx] > best) {
              best = inp[idx];
              bi = idx;
            }
          }
        }
        const o = (y * ow + x) * c + ch;
        out[o] = best;
        argmax[o] = bi;
      }
    }
  }
  return { out, argmax };
}

function maxPool2Backward(gOut: Float64Array, argmax: Int32Array, gInp: Float64Array): void {
  for (let i = 0; i < gOut.length; i++) gInp[argmax[i]] += gOut[i];
}

function upNearest2(inp: Float64Array, h: number, w: number, c: number): Float64Array {
  const out = new Float64Array(4 * h * w * c);
  const ow = 2 * w;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i0 = (y * w + x) * c;
      for (let dy = 0; dy < 2; dy++) {
        for (let dx = 0; dx < 2; dx++) {
          const o0 = ((2 * y + dy) * ow + 2 * x + dx) * c;
          for (let ch = 0; ch < c; ch++) out[o0 + ch] = inp[i0 + ch];
        }
      }
    }
  }
  return out;
}

function upNearest2Backward(gOut: Float64Array, h: number, w: number, c: number): Float64Array {
  const gInp = new Float64Array(h * w * c);
  const ow = 2 * w;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i0 = (y * w + x) * c;
      for (let dy = 0; dy < 2; dy++) {
        for (let dx = 0; dx < 2; dx++) {
          const o0 = ((2 * y + dy) * ow + 2 * x + dx) * c;
          for (let ch = 0; ch < c; ch++) gInp[i0 + ch] += gOut[o0 + ch];
        }
      }
    }
  }
  return gInp;
}

function concatC(a: Float64Array, ca: number, b: Float64Array, cb: number, pixels: number): Float64Array {
  const out = new Float64Array(pixels * (ca + cb));
  for (let p = 0; p < pixels; p++) {
    out.set(a.subarray(p * ca, (p + 1) * ca), p * (ca + cb));
    out.set(b.subarray(p * cb, (p + 1) * cb), p * (ca + cb) + ca);
  }
  return out;
}

function splitCBackward(g: Float64Array, ca: number, cb: number, pixels: number) {
  const ga = new Float64Array(pixels * ca);
  const gb = new Float64Array(pixels * cb);
  for (let p = 0; p < pixels; p++) {
    ga.set(g.subarray(p * (ca + cb), p * (ca + cb) + ca), p * ca);
    gb.set(g.subarray(p * (ca + cb) + ca, (p + 1) * (ca + cb)), p * cb);
  }
  return { ga, gb };
}

function avgPool(inp: Float64Array, h: number, w: number, c: number, f: number): Float64Array {
  const oh = h / f;
  const ow = w / f;
  const out = new Float64Array(oh * ow * c);
  const inv = 1.0 / (f * f);
  for (let y = 0; y < h; y++) {
    const oy = Math.floor(y / f);
    for (let x = 0; x < w; x++) {
      const ox = Math.floor(x / f);
      const i0 = (y * w + x) * c;
      const o0 = (oy * ow + ox) * c;
      for (let ch = 0; ch < c; ch++) out[o0 + ch] += inp[i0 + ch] * inv;
    }
  }
  return out;
}

function dropoutInPlace(a: Float64Array, rate: number, seed: number): Uint8Array | null {
  if (rate <= 0) return null;
  const rng = new Rng(seed);
  const keep = new Uint8Array(a.length);
  const scale = 1.0 / (1.0 - rate);
  for (let i = 0; i < a.length; i++) {
    if (rng.next() >= rate) {
      keep[i] = 1;
      a[i] *= scale;
    } else {
      a[i] = 0;
    }
  }
  return keep;
}

function dropoutBackward(g: Float64Array, keep: Uint8Array | null, rate: number): void {
  if (!keep) return;
  const scale = 1.0 / (1.0 - rate);
  for (let i = 0; i < g.length; i++) g[i] = keep[i] ? g[i] * scale : 0;
}

// --- the network ------------------------------------------------------------

interface Stage {
  act: Float64Array;
  h: number;
  w: number;
  c: number;
}

export interface ForwardCache {
  stages: { [name: string]: Stage };
  reluMasks: { [name: string]: Uint8Array };
  poolArg: { [name: string]: Int32Array };
  dropKeep: { [name: string]: Uint8Array | null };
  input: Float64Array;
}

export class Net {
  constructor(public cfg: NetConfig, public params: Params) {}

  static fresh(cfg: NetConfig = TOY_CONFIG, seed = 0): Net {
    return new Net(cfg, initParams(cfg, seed));
  }

  get innerSize(): number {
    return this.cfg.inputSize / this.cfg.scale;
  }

  /** Full-resolution logits. dropoutSeed null disables dropout (plain
   * deterministic inference); any integer enables seeded stochastic
   * masks -- the Monte-Carlo sampling path. */
  forward(x: Float64Array, dropoutSeed: number | null, cache?: ForwardCache): Float64Array {
    const cfg = this.cfg;
    const p = this.params;
    const S = this.innerSize;
    const [w1, w2, w3] = cfg.widths;
    const bn = cfg.bottleneck;
    const rate = dropoutSeed === null ? 0 : cfg.dropout;
    const st: { [k: string]: Stage } = {};
    const masks: { [k: string]: Uint8Array } = {};
    const args: { [k: string]: Int32Array } = {};
    const keeps: { [k: string]: Uint8Array | null } = {};
    const dseed = (i: number) => (dropoutSeed === null ? 0 : mix(dropoutSeed, i));

    const a0 = cfg.scale > 1 ? avgPool(x, cfg.inputSize, cfg.inputSize, 4, cfg.scale) : x.slice();
    st.a0 = { act: a0, h: S, w: S, c: 4 };

    const run = (name: string, src: Stage, co: number, k: number): Stage => {
      const out = new Float64Array(src.h * src.w * co);
      conv(src.act, src.h, src.w, src.c, co, k, p[`${name}.w`], p[`${name}.b`], out);
      masks[name] = reluInPlace(out);
      const stage = { act: out, h: src.h, w: src.w, c: co };
      st[name] = stage;
      return stage;
    };

    const e1 = run("enc1", st.a0, w1, 3);
    const p1 = maxPool2(e1.act, e1.h, e1.w, e1.c);
    st.p1 = { act: p1.out, h: S / 2, w: S / 2, c: w1 };
    args.p1 = p1.argmax;
    const e2 = run("enc2", st.p1, w2, 3);
    const p2 = maxPool2(e2.act, e2.h, e2.w, e2.c);
    st.p2 = { act: p2.out, h: S / 4, w: S / 4, c: w2 };
    args.p2 = p2.argmax;
    const e3 = run("enc3", st.p2, w3, 3);
    const p3 = maxPool2(e3.act, e3.h, e3.w, e3.c);
    st.p3 = { act: p3.out, h: S / 8, w: S / 8, c: w3 };
    args.p3 = p3.argmax;
    const b = run("bneck", st.p3, bn, 3);

    let d = 0;
    const decode = (name: string, below: Stage, skip: Stage, co: number): Stage => {
      const up = upNearest2(below.act, below.h, below.w, below.c);
      const cat = concatC(up, below.c, skip.act, skip.c, skip.h * skip.w);
      st[`${name}.cat`] = { act: cat, h: skip.h, w: skip.w, c: below.c + skip.c };
      const a = run(`${name}a`, st[`${name}.cat`], co, 1);
      keeps[`${name}a`] = dropoutInPlace(a.act, rate, dseed(d++));
      const bstage = run(`${name}b`, a, co, 3);
      keeps[`${name}b`] = dropoutInPlace(bstage.act, rate, dseed(d++));
      return bstage;
    };

    const d3 = decode("dec3", b, e3, w3);
    const d2 = decode("dec2", d3, e2, w2);
    const d1 = decode("dec1", d2, e1, w1);

    const logits = new Float64Array(S * S);
    conv(d1.act, S, S, w1, 1, 1, p["head.w"], p["head.b"], logits);
    st.logits = { act: logits, h: S, w: S, c: 1 };

    if (cache) {
      cache.stages = st;
      cache.reluMasks = masks;
      cache.poolArg = args;
      cache.dropKeep = keeps;
      cache.input = x;
    }
    // nearest upsample back to wire resolution
    let full: Float64Array = logits;
    let size = S;
    while (size < cfg.inputSize) {
      full = upNearest2(full, size, size, 1);
      size *= 2;
    }
    return full;
  }

  /** Gradients of a scalar loss wrt all params, given dLoss/dLogits at
   * full resolution. Returns accumulated into `grads`. */
  backward(cache: ForwardCache, gFull: Float64Array, grads: Params): void {
    const cfg = this.cfg;
    const p = this.params;
    const S = this.innerSize;
    const [w1, w2, w3] = cfg.widths;
    const st = cache.stages;
    const rate = cfg.dropout;

    let g = gFull;
    let size = cfg.inputSize;
    while (size > S) {
      size /= 2;
      g = upNearest2Backward(g, size, size, 1);
    }

    const gConv = (name: string, src: Stage, gOut: Float64Array, k: number): Float64Array => {
      const gIn = new Float64Array(src.act.length);
      convBackward(src.act, src.h, src.w, src.c, gOut.length / (src.h * src.w), k,
                   p[`${name}.w`], gOut, gIn, grads[`${name}.w`], grads[`${name}.b`]);
      return gIn;
    };

    // head
    let gD1 = gConv("head", st.dec1b, g, 1);

    const decodeBack = (name: string, below: Stage, skip: Stage, gOut: Float64Array) => {
      const aName = `${name}a`;
      const bName = `${name}b`;
      const keepB = cache.dropKeep[bName];
      if (keepB !== undefined) dropoutBackward(gOut, keepB, rate);
      reluBackward(gOut, cache.reluMasks[bName]);
      let gA = gConv(bName, st[aName], gOut, 3);
      const keepA = cache.dropKeep[aName];
      if (keepA !== undefined) dropoutBackward(gA, keepA, rate);
      reluBackward(gA, cache.reluMasks[aName]);
      const gCat = gConv(aName, st[`${name}.cat`], gA, 1);
      const { ga: gUp, gb: gSkip } = splitCBackward(gCat, below.c, skip.c, skip.h * skip.w);
      const gBelow = upNearest2Backward(gUp, below.h, below.w, below.c);
      return { gBelow, gSkip };
    };

    const r1 = decodeBack("dec1", st.dec2b, st.enc1, gD1);
    const r2 = decodeBack("dec2", st.dec3b, st.enc2, r1.gBelow);
    const r3 = decodeBack("dec3", st.bneck, st.enc3, r2.gBelow);

    // bottleneck and encoder chain; skip-connection grads join here
    let gB = r3.gBelow;
    reluBackward(gB, cache.reluMasks.bneck);
    let gP3 = gConv("bneck", st.p3, gB, 3);
    const gE3 = new Float64Array(st.enc3.act.length);
    maxPool2Backward(gP3, cache.poolArg.p3, gE3);
    for (let i = 0; i < gE3.length; i++) gE3[i] += r3.gSkip[i];
    reluBackward(gE3, cache.reluMasks.enc3);
    let gP2 = gConv("enc3", st.p2, gE3, 3);
    const gE2 = new Float64Array(st.enc2.act.length);
    maxPool2Backward(gP2, cache.poolArg.p2, gE2);
    for (let i = 0; i < gE2.length; i++) gE2[i] += r2.gSkip[i];
    reluBackward(gE2, cache.reluMasks.enc2);
    let gP1 = gConv("enc2", st.p1, gE2, 3);
    const gE1 = new Float64Array(st.enc1.act.length);
    maxPool2Backward(gP1, cache.poolArg.p1, gE1);
    for (let i = 0; i < gE1.length; i++) gE1[i] += r1.gSkip[i];
    reluBackward(gE1, cache.reluMasks.enc1);
    gConv("enc1", st.a0, gE1, 3); // input gradient discarded
  }
}

export function sigmoid(v: number): number {
  return 1.0 / (1.0 + Math.exp(-v));
}

/** Masked binary cross entropy with logits; returns the mean loss over
 * masked pixels and writes dLoss/dLogits into gOut when provided. */
export function maskedBceWithLogits(
  logits: Float64Array, targets: Float64Array | Uint8Array,
  mask: Uint8Array, gOut?: Float64Array,
): number {
  let n = 0;
  let loss = 0;
  for (let i = 0; i < logits.length; i++) if (mask[i]) n++;
  for (let i = 0; i < logits.length; i++) {
    if (!mask[i]) {
      if (gOut) gOut[i] = 0;
      continue;
    }
    const z = logits[i];
    const t = targets[i];
    // numerically stable: max(z,0) - z*t + log(1+exp(-|z|))
    loss += Math.max(z, 0) - z * t + Math.log1p(Math.exp(-Math.abs(z)));
    if (gOut) gOut[i] = (sigmoid(z) - t) / n;
  }
  return loss / n;
}

export function areaMask(size: number): Uint8Array {
  const mask = new Uint8Array(size * size);
  const scale = size / CROP;
  const off = AREA_OFF * scale;
  const len = AREA * scale;
  for (let r = off; r < off + len; r++) {
    for (let c = off; c < off + len; c++) mask[r * size + c] = 1;
  }
  return mask;
}

/** Sigmoid probabilities for the centered 80x80 area, one raster per
 * Monte-Carlo dropout sample. */
export function predictArea(net: Net, x: Float64Array, nSamples: number, seed: number): number[][][] {
  if (net.cfg.inputSize !== CROP) {
    throw new Error(`predictArea expects wire-sized input (${CROP})`);
  }
  const out: number[][][] = [];
  for (let j = 0; j < nSamples; j++) {
    const logits = net.forward(x, mix(seed >>> 0, j + 1));
    const raster: number[][] = [];
    for (let r = 0; r < AREA; r++) {
      const row = new Array<number>(AREA);
      for (let c = 0; c < AREA; c++) {
        row[c] = sigmoid(logits[(AREA_OFF + r) * net.cfg.inputSize + (AREA_OFF + c)]);
      }
      raster.push(row);
    }
    out.push(raster);
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------

export function saveCheckpoint(file: string, net: Net): void {
  const params: { [k: string]: string } = {};
  for (const k of Object.keys(net.params)) {
    params[k] = Buffer.from(new Float32Array(net.params[k]).buffer).toString("base64");
  }
  fs.writeFileSync(file, JSON.stringify({ config: net.cfg, params }, null, 1));
}

export function loadCheckpoint(file: string): Net {
  const data = JSON.parse(fs.readFileSync(file, "utf8"));
  const params: Params = {};
  for (const k of Object.keys(data.params)) {
    const buf = Buffer.from(data.params[k], "base64");
    const f32 = new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
    const arr = new Float64Array(f32.length);
    for (let i = 0; i < f32.length; i++) arr[i] = f32[i];
    params[k] = arr;
  }
  return new Net(data.config, params);
}
