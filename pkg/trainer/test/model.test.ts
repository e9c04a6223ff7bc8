import { describe, expect, it } from "vitest";
import { DEFAULT_HYPER, Hyper, roundToF32 } from "../src/format.js";
import {
  Workspace, backward, crossEntropy, forward, inferF32, initParams,
  makeModel, setNormStats,
} from "../src/model.js";
import { gradientCheck } from "../src/train.js";
import { mulberry32 } from "../src/rng.js";
import { toyWindows } from "./helpers.js";

const TINY: Hyper = {
  window: 3, features: 4, d_model: 8, n_heads: 2, ffn_dim: 12,
};

describe("forward pass", () => {
  const model = makeModel(DEFAULT_HYPER);
  const params = initParams(model, mulberry32(3));
  const recs = toyWindows(mulberry32(5), 8);

  it("returns a two-way distribution", () => {
    const ws = new Workspace(model.hyper);
    for (const r of recs) {
      const p = forward(model, params, r.w, ws);
      expect(p[0]).toBeGreaterThan(0);
      expect(p[1]).toBeGreaterThan(0);
      expect(p[0] + p[1]).toBeCloseTo(1, 12);
    }
  });

  it("is deterministic", () => {
    const ws1 = new Workspace(model.hyper);
    const ws2 = new Workspace(model.hyper);
    const a = forward(model, params, recs[0].w, ws1);
    const b = forward(model, params, recs[0].w, ws2);
    expect(a[0]).toBe(b[0]);
    expect(a[1]).toBe(b[1]);
  });

  it("ignores the absolute position offset of a window", () => {
    // positions are made relative to the first observation, so a rigid
    // translation of the whole window changes nothing
    const ws = new Workspace(model.hyper);
    const shifted = recs[0].w.slice();
    for (let i = 0; i < model.hyper.window; i++) {
      shifted[i * 9] += 500;
      shifted[i * 9 + 1] -= 250;
      shifted[i * 9 + 2] += 40;
    }
    const a = forward(model, params, recs[0].w, ws).slice();
    const b = forward(model, params, shifted, ws);
    expect(b[1]).toBeCloseTo(a[1], 9);
  });
});

describe("float32 inference emulation", () => {
  const model = makeModel(DEFAULT_HYPER);
  const params = initParams(model, mulberry32(3));
  const recs = toyWindows(mulberry32(6), 4);

  it("tracks the float64 forward closely", () => {
    const ws = new Workspace(model.hyper);
    const p32 = roundToF32(params);
    for (const r of recs) {
      const a = forward(model, params, r.w, ws);
      const b = inferF32(model, p32, r.w);
      expect(Math.abs(a[1] - b[1])).toBeLessThan(1e-4);
      expect(b[0] + b[1]).toBeCloseTo(1, 6);
    }
  });

  it("is bit-reproducible", () => {
    const p32 = roundToF32(params);
    const a = inferF32(model, p32, recs[0].w);
    const b = inferF32(model, p32, recs[0].w);
    expect(a[0]).toBe(b[0]);
    expect(a[1]).toBe(b[1]);
  });
});

describe("gradients", () => {
  it("match central differences on the full-size model", () => {
    const model = makeModel(DEFAULT_HYPER);
    const recs = toyWindows(mulberry32(9), 4);
    const res = gradientCheck(model, recs, 17, 100);
    expect(res.checked).toBe(100);
    expect(res.maxRelErr).toBeLessThan(1e-4);
  });

  it("match central differences at every parameter of a tiny model", () => {
    const model = makeModel(TINY);
    const recs = toyWindows(mulberry32(11), 3, TINY.window, TINY.features);
    const res = gradientCheck(model, recs, 19, model.nTrainable);
    expect(res.checked).toBe(model.nTrainable);
    expect(res.maxRelErr).toBeLessThan(1e-4);
  });

  it("accumulate over repeated backward calls", () => {
    const model = makeModel(TINY);
    const params = initParams(model, mulberry32(23));
    const ws = new Workspace(model.hyper);
    const recs = toyWindows(mulberry32(29), 1, TINY.window, TINY.features);
    const g1 = new Float64Array(model.nParams);
    forward(model, params, recs[0].w, ws);
    backward(model, params, g1, ws, recs[0].label);
    const g2 = new Float64Array(model.nParams);
    forward(model, params, recs[0].w, ws);
    backward(model, params, g2, ws, recs[0].label);
    backward(model, params, g2, ws, recs[0].label);
    for (let i = 0; i < model.nTrainable; i++) {
      expect(g2[i]).toBeCloseTo(2 * g1[i], 10);
    }
  });

  it("never touch the normalisation stats", () => {
    const model = makeModel(TINY);
    const params = initParams(model, mulberry32(31));
    setNormStats(model, params, [1, 2, 3, 4], [2, 2, 2, 2]);
    const ws = new Workspace(model.hyper);
    const recs = toyWindows(mulberry32(37), 2, TINY.window, TINY.features);
    const g = new Float64Array(model.nParams);
    for (const r of recs) {
      forward(model, params, r.w, ws);
      backward(model, params, g, ws, r.label);
    }
    for (let i = model.nTrainable; i < model.nParams; i++) {
      expect(g[i]).toBe(0);
    }
  });

  it("vanish on attention key biases", () => {
    // a key bias adds the same constant to every score of a query, and
    // softmax is invariant to that shift, so its true gradient is zero
    const model = makeModel(TINY);
    const params = initParams(model, mulberry32(41));
    const ws = new Workspace(model.hyper);
    const recs = toyWindows(mulberry32(43), 4, TINY.window, TINY.features);
    const g = new Float64Array(model.nParams);
    for (const r of recs) {
      forward(model, params, r.w, ws);
      backward(model, params, g, ws, r.label);
    }
    const d = model.hyper.d_model;
    for (let j = 0; j < d; j++) {
      expect(Math.abs(g[model.off.encBk + j])).toBeLessThan(1e-12);
      expect(Math.abs(g[model.off.decBk + j])).toBeLessThan(1e-12);
    }
  });
});

describe("loss", () => {
  it("is the negative log of the chosen class", () => {
    const p = new Float64Array([0.25, 0.75]);
    expect(crossEntropy(p, 1)).toBeCloseTo(-Math.log(0.75), 12);
    expect(crossEntropy(p, 0)).toBeCloseTo(-Math.log(0.25), 12);
  });
});
