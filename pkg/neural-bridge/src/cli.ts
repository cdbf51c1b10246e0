/** Command line: export / train / serve / eval / init. */
import * as fs from "node:fs";

import { DEFAULT_EXPORT, ExportOptions, exportDataset } from "./dataset";
import { Net, NetConfig, TOY_CONFIG, loadCheckpoint, saveCheckpoint } from "./model";
import { serve } from "./serve";
import { TOY_TRAIN, TrainingDiverged, evaluateSegmentation, openDataset, train } from "./train";

function parseArgs(argv: string[]): { [k: string]: string } {
  const out: { [k: string]: string } = {};
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument ${argv[i]}`);
    const key = argv[i].slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      out[key] = argv[++i];
    } else {
      out[key] = "true";
    }
  }
  return out;
}

function netConfig(args: { [k: string]: string }): NetConfig {
  const cfg = { ...TOY_CONFIG };
  if (args.widths) {
    const parts = args.widths.split(",").map((s) => parseInt(s, 10));
    if (parts.length !== 3 || parts.some((p) => !p)) throw new Error("--widths needs 3 integers");
    cfg.widths = parts as [number, number, number];
  }
  if (args.bottleneck) cfg.bottleneck = parseInt(args.bottleneck, 10);
  if (args.scale) cfg.scale = parseInt(args.scale, 10);
  if (args.dropout) cfg.dropout = parseFloat(args.dropout);
  if (args.full) {
    // paper-scale-ish: no internal downsampling, wider stages
    cfg.scale = 1;
    cfg.widths = [32, 64, 128];
    cfg.bottleneck = 256;
  }
  return cfg;
}

async function main(): Promise<number> {
  const [cmd, ...rest] = process.argv.slice(2);
  const args = parseArgs(rest);
  switch (cmd) {
    case "export": {
      if (!args.run || !args.out) throw new Error("usage: export --run <dir> --out <dir>");
      const opts: ExportOptions = { ...DEFAULT_EXPORT };
      if (args.ratios) {
        const parts = args.ratios.split(",").map(Number);
        if (parts.length !== 3) throw new Error("--ratios needs 3 numbers");
        opts.ratios = parts as [number, number, number];
      }
      if (args["split-by"]) {
        if (args["split-by"] !== "world" && args["split-by"] !== "sample") {
          throw new Error("--split-by must be world or sample");
        }
        opts.splitBy = args["split-by"];
      }
      const meta = exportDataset(args.run, args.out, opts);
      console.error(`exported ${meta.samples.length} samples `
        + `(train ${meta.splits.train.length} / val ${meta.splits.val.length} `
        + `/ test ${meta.splits.test.length})`);
      return 0;
    }
    case "train": {
      if (!args.data || !args.out) throw new Error("usage: train --data <dir> --out <ckpt>");
      const opts = { ...TOY_TRAIN, net: netConfig(args) };
      if (args.epochs) opts.epochs = parseInt(args.epochs, 10);
      if (args.batch) opts.batchSize = parseInt(args.batch, 10);
      if (args.lr) opts.lr = parseFloat(args.lr);
      if (args["weight-decay"]) opts.weightDecay = parseFloat(args["weight-decay"]);
      if (args.seed) opts.seed = parseInt(args.seed, 10);
      if (args["no-augment"]) opts.augment = false;
      if (args.curve) opts.curveFile = args.curve;
      try {
        const net = train(openDataset(args.data), opts);
        saveCheckpoint(args.out, net);
        console.error(`checkpoint written to ${args.out}`);
      } catch (e) {
        if (e instanceof TrainingDiverged) {
          console.error(`aborted: ${e.message}`);
          return 2;
        }
        throw e;
      }
      return 0;
    }
    case "serve": {
      if (!args.checkpoint) throw new Error("usage: serve --checkpoint <ckpt>");
      await serve(loadCheckpoint(args.checkpoint));
      return 0;
    }
    case "init": {
      if (!args.out) throw new Error("usage: init --out <ckpt>");
      const seed = args.seed ? parseInt(args.seed, 10) : 0;
      saveCheckpoint(args.out, Net.fresh(netConfig(args), seed));
      console.error(`fresh checkpoint written to ${args.out}`);
      return 0;
    }
    case "eval": {
      if (!args.data || !args.checkpoint) {
        throw new Error("usage: eval --data <dir> --checkpoint <ckpt> [--split test]");
      }
      const ds = openDataset(args.data);
      const split = (args.split ?? "test") as "train" | "val" | "test";
      const net = loadCheckpoint(args.checkpoint);
      const m = evaluateSegmentation(net, ds[split]);
      console.log(JSON.stringify(m, null, 1));
      return 0;
    }
    default:
      console.error("usage: cli <export|train|serve|init|eval> [--flags]");
      return 1;
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
  },
);
