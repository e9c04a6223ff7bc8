#!/usr/bin/env node
/** Command line front end: dataset construction and training/export. */
import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";
import {
  BuildOptions, DEFAULT_BUILD, WindowRec, buildWindows, labelFraction,
  loadDataset, saveDataset, thinAndBalance,
} from "./data.js";
import { DEFAULT_HYPER, loadWeights, roundToF32, saveWeights } from "./format.js";
import { Model, inferF32, makeModel } from "./model.js";
import {
  DEFAULT_TRAIN, TrainConfig, crossValidate, evaluate, gradientCheck,
  trainModel,
} from "./train.js";
import { mulberry32, shuffle } from "./rng.js";

function usage(): never {
  process.stderr.write(`usage:
  trajformer-trainer build-dataset --run DIR [--run DIR ...] --out FILE.jsonl.gz
      [--seed N] [--max-per-case N] [--match-radius M]
  trajformer-trainer train --data FILE.jsonl.gz --weights OUT.tfw
      [--parity OUT.json] [--report OUT.json] [--folds K] [--epochs N]
      [--lr X] [--batch N] [--seed N] [--parity-count N]
`);
  process.exit(2);
}

function num(v: string | undefined, dflt: number): number {
  if (v === undefined) return dflt;
  const n = Number(v);
  if (!Number.isFinite(n)) usage();
  return n;
}

function cmdBuildDataset(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      run: { type: "string", multiple: true },
      out: { type: "string" },
      seed: { type: "string" },
      "max-per-case": { type: "string" },
      "match-radius": { type: "string" },
    },
  });
  const runs = values.run ?? [];
  const out = values.out;
  if (runs.length === 0 || !out) usage();
  const opts: BuildOptions = {
    ...DEFAULT_BUILD,
    matchRadius: num(values["match-radius"], DEFAULT_BUILD.matchRadius),
  };
  const all: WindowRec[] = [];
  for (const dir of runs) {
    const obs = path.join(dir, "track_obs.jsonl");
    const truth = path.join(dir, "truth.jsonl");
    const recs = buildWindows(obs, truth, path.basename(dir), opts);
    process.stderr.write(
      `${dir}: ${recs.length} windows, ` +
      `${(labelFraction(recs) * 100).toFixed(1)}% true\n`);
    all.push(...recs);
  }
  const rng = mulberry32(num(values.seed, 11));
  const kept = thinAndBalance(all, rng, num(values["max-per-case"], 30));
  saveDataset(out, kept);
  const cases = new Set(kept.map((r) => r.caseId)).size;
  process.stderr.write(
    `wrote ${kept.length} windows (${cases} cases, ` +
    `${(labelFraction(kept) * 100).toFixed(1)}% true) to ${out}\n`);
}

function pickParityWindows(recs: WindowRec[], count: number,
                           seed: number): WindowRec[] {
  // half from each label so the parity set exercises both output modes
  const pos = recs.filter((r) => r.label === 1);
  const neg = recs.filter((r) => r.label === 0);
  const rng = mulberry32(seed);
  shuffle(rng, pos);
  shuffle(rng, neg);
  const half = Math.floor(count / 2);
  const picked = [...pos.slice(0, half), ...neg.slice(0, count - half)];
  if (picked.length < count) {
    throw new Error(`dataset too small for ${count} parity windows`);
  }
  return picked;
}

function cmdTrain(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      data: { type: "string" },
      weights: { type: "string" },
      parity: { type: "string" },
      report: { type: "string" },
      folds: { type: "string" },
      epochs: { type: "string" },
      lr: { type: "string" },
      batch: { type: "string" },
      seed: { type: "string" },
      "parity-count": { type: "string" },
    },
  });
  if (!values.data || !values.weights) usage();
  const cfg: TrainConfig = {
    ...DEFAULT_TRAIN,
    epochs: num(values.epochs, DEFAULT_TRAIN.epochs),
    lr: num(values.lr, DEFAULT_TRAIN.lr),
    batch: num(values.batch, DEFAULT_TRAIN.batch),
    seed: num(values.seed, DEFAULT_TRAIN.seed),
  };
  const folds = num(values.folds, 5);
  const parityCount = num(values["parity-count"], 64);
  const log = (s: string) => process.stderr.write(s + "\n");

  const recs = loadDataset(values.data);
  const nCases = new Set(recs.map((r) => r.caseId)).size;
  log(`dataset: ${recs.length} windows, ${nCases} cases, ` +
      `${(labelFraction(recs) * 100).toFixed(1)}% true`);

  const model = makeModel(DEFAULT_HYPER);

  const gcSample = recs.slice(0, 4);
  const gc = gradientCheck(model, gcSample, cfg.seed + 1);
  log(`gradient check: max rel err ${gc.maxRelErr.toExponential(3)} ` +
      `over ${gc.checked} params`);

  let foldResults: ReturnType<typeof crossValidate> = [];
  if (folds > 1) {
    foldResults = crossValidate(model, recs, folds, cfg, log);
    const mean = foldResults.reduce((s, f) => s + f.accuracy, 0) /
      foldResults.length;
    log(`cross-validation mean accuracy ${mean.toFixed(4)}`);
  }

  log("final training on the full dataset");
  const { params, curve } = trainModel(model, recs, cfg, log);
  const trainEval = evaluate(model, params, recs);
  log(`final training-set accuracy ${trainEval.accuracy.toFixed(4)}`);

  fs.mkdirSync(path.dirname(values.weights), { recursive: true });
  saveWeights(values.weights, model.hyper, params);
  log(`wrote weights to ${values.weights}`);

  let parityInfo: any = null;
  if (values.parity) {
    // record what the float32 file actually produces, not the float64
    // training-side numbers
    const { params: reloaded } = loadWeights(values.weights);
    const p32 = roundToF32(reloaded);
    const picked = pickParityWindows(recs, parityCount, cfg.seed + 2);
    const cases = picked.map((r) => ({
      w: r.w,
      label: r.label,
      p_true: inferF32(model, p32, r.w)[1],
    }));
    const parity = {
      count: cases.length,
      hyper: { ...model.hyper },
      cases,
    };
    fs.mkdirSync(path.dirname(values.parity), { recursive: true });
    fs.writeFileSync(values.parity, JSON.stringify(parity) + "\n");
    parityInfo = { count: cases.length, file: values.parity };
    log(`wrote ${cases.length} parity vectors to ${values.parity}`);
  }

  if (values.report) {
    const report = {
      config: cfg,
      dataset: {
        file: values.data,
        windows: recs.length,
        cases: nCases,
        true_fraction: labelFraction(recs),
      },
      gradient_check: gc,
      folds: foldResults,
      final: { curve, train_accuracy: trainEval.accuracy },
      parity: parityInfo,
    };
    fs.writeFileSync(values.report, JSON.stringify(report, null, 2) + "\n");
    log(`wrote report to ${values.report}`);
  }
}

const [cmd, ...rest] = process.argv.slice(2);
try {
  if (cmd === "build-dataset") cmdBuildDataset(rest);
  else if (cmd === "train") cmdTrain(rest);
  else usage();
} catch (err: any) {
  if (typeof err?.code === "string" && err.code.startsWith("ERR_PARSE_ARGS")) {
    usage();
  }
  throw err;
}
