/** Training loop, cross-validation and gradient verification. */
import {
  Model, Workspace, backward, crossEntropy, forward, initParams,
  setNormStats,
} from "./model.js";
import { WindowRec, caseFolds } from "./data.js";
import { Rng, mulberry32, shuffle } from "./rng.js";

export interface TrainConfig {
  epochs: number;
  lr: number;
  momentum: number;
  batch: number;
  seed: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  epochs: 14,
  lr: 1e-3,
  momentum: 0.9,
  batch: 64,
  seed: 7,
};

/** Per-feature mean/std over the relative-transformed training windows.
 * The same relative transform runs inside the forward pass; stats here
 * must describe what the network actually sees. */
export function normStats(m: Model,
                          recs: WindowRec[]): { mean: number[]; std: number[] } {
  const w = m.hyper.window, f = m.hyper.features;
  // two passes: E[x^2]-mu^2 loses digits when positions dwarf the spread
  const sum = new Float64Array(f);
  let n = 0;
  for (const r of recs) {
    const bx = r.w[0], by = r.w[1], bz = r.w[2];
    for (let i = 0; i < w; i++) {
      for (let j = 0; j < f; j++) {
        let vv = r.w[i * f + j];
        if (j < 3) vv -= j === 0 ? bx : j === 1 ? by : bz;
        sum[j] += vv;
      }
      n++;
    }
  }
  const mean: number[] = [];
  for (let j = 0; j < f; j++) mean.push(sum[j] / Math.max(n, 1));
  const dev = new Float64Array(f);
  for (const r of recs) {
    const bx = r.w[0], by = r.w[1], bz = r.w[2];
    for (let i = 0; i < w; i++) {
      for (let j = 0; j < f; j++) {
        let vv = r.w[i * f + j];
        if (j < 3) vv -= j === 0 ? bx : j === 1 ? by : bz;
        dev[j] += (vv - mean[j]) * (vv - mean[j]);
      }
    }
  }
  const std: number[] = [];
  for (let j = 0; j < f; j++)
    std.push(Math.max(Math.sqrt(dev[j] / Math.max(n, 1)), 1e-6));
  return { mean, std };
}

export interface EvalResult {
  loss: number;
  accuracy: number;
  n: number;
}

export function evaluate(m: Model, p: Float64Array, recs: WindowRec[],
                         ws?: Workspace): EvalResult {
  const work = ws ?? new Workspace(m.hyper);
  let loss = 0, correct = 0;
  for (const r of recs) {
    const probs = forward(m, p, r.w, work);
    loss += crossEntropy(probs, r.label);
    if ((probs[1] >= 0.5 ? 1 : 0) === r.label) correct++;
  }
  const n = Math.max(recs.length, 1);
  return { loss: loss / n, accuracy: correct / n, n: recs.length };
}

export interface EpochStat {
  epoch: number;
  loss: number;
  accuracy: number;
}

/** Minibatch SGD with momentum. Returns the trained parameters and the
 * per-epoch training curve. Aborts loudly if the loss stops being
 * finite instead of silently producing a garbage model. */
export function trainModel(m: Model, recs: WindowRec[], cfg: TrainConfig,
                           log?: (line: string) => void):
    { params: Float64Array; curve: EpochStat[] } {
  if (recs.length === 0) throw new Error("empty training set");
  const rng = mulberry32(cfg.seed);
  const params = initParams(m, rng);
  const stats = normStats(m, recs);
  setNormStats(m, params, stats.mean, stats.std);

  const grads = new Float64Array(m.nParams);
  const vel = new Float64Array(m.nTrainable);
  const ws = new Workspace(m.hyper);
  const order = recs.map((_, i) => i);
  const curve: EpochStat[] = [];

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    shuffle(rng, order);
    let epochLoss = 0, correct = 0;
    for (let start = 0; start < order.length; start += cfg.batch) {
      const end = Math.min(start + cfg.batch, order.length);
      const bs = end - start;
      grads.fill(0, 0, m.nTrainable);
      let batchLoss = 0;
      for (let bi = start; bi < end; bi++) {
        const r = recs[order[bi]];
        const probs = forward(m, params, r.w, ws);
        batchLoss += crossEntropy(probs, r.label);
        if ((probs[1] >= 0.5 ? 1 : 0) === r.label) correct++;
        backward(m, params, grads, ws, r.label);
      }
      if (!Number.isFinite(batchLoss)) {
        let maxP = 0, maxG = 0;
        for (let i = 0; i < m.nTrainable; i++) {
          maxP = Math.max(maxP, Math.abs(params[i]));
          maxG = Math.max(maxG, Math.abs(grads[i]));
        }
        throw new Error(
          `non-finite loss at epoch ${epoch} batch ${start / cfg.batch} ` +
          `(lr=${cfg.lr}, max|param|=${maxP.toExponential(3)}, ` +
          `max|grad|=${maxG.toExponential(3)})`);
      }
      epochLoss += batchLoss;
      const scale = cfg.lr / bs;
      for (let i = 0; i < m.nTrainable; i++) {
        vel[i] = cfg.momentum * vel[i] - scale * grads[i];
        params[i] += vel[i];
      }
    }
    const stat = {
      epoch,
      loss: epochLoss / recs.length,
      accuracy: correct / recs.length,
    };
    curve.push(stat);
    if (log) {
      log(`epoch ${epoch + 1}/${cfg.epochs} loss ${stat.loss.toFixed(4)} ` +
          `acc ${stat.accuracy.toFixed(4)}`);
    }
  }
  return { params, curve };
}

export interface FoldResult {
  fold: number;
  trainN: number;
  testN: number;
  accuracy: number;
  loss: number;
}

/** K-fold cross-validation split on cases, never on windows, so all
 * windows of one track stay on the same side. Each fold retrains from
 * scratch with its own normalisation stats. */
export function crossValidate(m: Model, recs: WindowRec[], k: number,
                              cfg: TrainConfig,
                              log?: (line: string) => void): FoldResult[] {
  const folds = caseFolds(recs, k, mulberry32(cfg.seed ^ 0x9e3779b9));
  const results: FoldResult[] = [];
  for (let fi = 0; fi < k; fi++) {
    const held = folds[fi];
    const train = recs.filter((r) => !held.has(r.caseId));
    const test = recs.filter((r) => held.has(r.caseId));
    const { params } = trainModel(m, train, cfg);
    const ev = evaluate(m, params, test);
    results.push({
      fold: fi,
      trainN: train.length,
      testN: test.length,
      accuracy: ev.accuracy,
      loss: ev.loss,
    });
    if (log) {
      log(`fold ${fi + 1}/${k}: test acc ${ev.accuracy.toFixed(4)} ` +
          `loss ${ev.loss.toFixed(4)} (n=${ev.n})`);
    }
  }
  return results;
}

export interface GradCheckResult {
  maxRelErr: number;
  meanRelErr: number;
  checked: number;
  worst: { index: number; analytic: number; numeric: number };
}

/** Central-difference check of the analytic gradient on a handful of
 * windows. Compares dL/dp at nSamples randomly chosen trainable
 * parameters against (L(p+h) - L(p-h)) / 2h. */
export function gradientCheck(m: Model, recs: WindowRec[], seed: number,
                              nSamples = 100, h = 1e-5): GradCheckResult {
  const rng = mulberry32(seed);
  const params = initParams(m, rng);
  const stats = normStats(m, recs);
  setNormStats(m, params, stats.mean, stats.std);
  const ws = new Workspace(m.hyper);

  const meanLoss = (): number => {
    let s = 0;
    for (const r of recs) s += crossEntropy(forward(m, params, r.w, ws), r.label);
    return s / recs.length;
  };

  const grads = new Float64Array(m.nParams);
  for (const r of recs) {
    forward(m, params, r.w, ws);
    backward(m, params, grads, ws, r.label);
  }
  for (let i = 0; i < m.nTrainable; i++) grads[i] /= recs.length;

  const idxPool = [...Array(m.nTrainable).keys()];
  shuffle(rng, idxPool);
  const picked = idxPool.slice(0, Math.min(nSamples, m.nTrainable));

  let maxRelErr = 0, sumRelErr = 0;
  let worst = { index: -1, analytic: 0, numeric: 0 };
  for (const idx of picked) {
    const orig = params[idx];
    params[idx] = orig + h;
    const lp = meanLoss();
    params[idx] = orig - h;
    const lm = meanLoss();
    params[idx] = orig;
    const numeric = (lp - lm) / (2 * h);
    const analytic = grads[idx];
    // floor the denominator above the f64 central-difference noise
    // (~eps*|L|/h ~ 1e-11): params with an exactly-zero gradient, like
    // attention key biases, would otherwise score FD rounding noise
    // against an arbitrarily small scale.
    const rel = Math.abs(analytic - numeric) /
      Math.max(1e-6, Math.abs(analytic) + Math.abs(numeric));
    sumRelErr += rel;
    if (rel > maxRelErr) {
      maxRelErr = rel;
      worst = { index: idx, analytic, numeric };
    }
  }
  return {
    maxRelErr,
    meanRelErr: sumRelErr / picked.length,
    checked: picked.length,
    worst,
  };
}
