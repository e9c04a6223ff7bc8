import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import {
  DEFAULT_HYPER, loadWeights, roundToF32, saveWeights, stableStringify,
  tensorTable, totalParams,
} from "../src/format.js";
import { makeModel, initParams } from "../src/model.js";
import { mulberry32 } from "../src/rng.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "tfw-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

describe("tensor table", () => {
  it("matches a by-hand parameter count for the default shape", () => {
    // counted independently from the layer shapes
    const f = 9, d = 32, w = 6, ffn = 64;
    const embed = f * d + d;
    const pos = w * d;
    const attn = 4 * (d * d + d);
    const lns = 4 * d;
    const ffnP = d * ffn + ffn + ffn * d + d;
    const block = attn + lns + ffnP;
    const head = d * 2 + 2;
    const norm = 2 * f;
    expect(totalParams(DEFAULT_HYPER))
      .toBe(embed + pos + 2 * block + head + norm);
  });

  it("has contiguous offsets", () => {
    let off = 0;
    for (const t of tensorTable(DEFAULT_HYPER)) {
      expect(t.offset).toBe(off);
      expect(t.size).toBe(t.shape.reduce((a, b) => a * b, 1));
      off += t.size;
    }
  });

  it("ends with the normalisation stats", () => {
    const names = tensorTable(DEFAULT_HYPER).map((t) => t.name);
    expect(names.slice(-2)).toEqual(["norm.mean", "norm.std"]);
  });
});

describe("stableStringify", () => {
  it("sorts keys at every level", () => {
    expect(stableStringify({ b: 1, a: { d: 2, c: [3, { z: 4, y: 5 }] } }))
      .toBe('{"a": {"c": [3, {"y": 5, "z": 4}], "d": 2}, "b": 1}');
  });
});

describe("weight container", () => {
  const model = makeModel(DEFAULT_HYPER);
  const params = initParams(model, mulberry32(42));

  it("round trips values at float32 precision", () => {
    const file = path.join(tmp, "w.tfw");
    saveWeights(file, DEFAULT_HYPER, params);
    const back = loadWeights(file);
    expect(back.hyper).toEqual(DEFAULT_HYPER);
    const p32 = roundToF32(params);
    for (let i = 0; i < p32.length; i++) {
      expect(back.params[i]).toBe(p32[i]);
    }
  });

  it("re-exports byte-identically", () => {
    const f1 = path.join(tmp, "a.tfw");
    const f2 = path.join(tmp, "b.tfw");
    saveWeights(f1, DEFAULT_HYPER, params);
    saveWeights(f2, DEFAULT_HYPER, params);
    expect(fs.readFileSync(f1).equals(fs.readFileSync(f2))).toBe(true);
  });

  it("starts with a single sorted-key JSON header line", () => {
    const file = path.join(tmp, "w2.tfw");
    saveWeights(file, DEFAULT_HYPER, params);
    const raw = fs.readFileSync(file);
    const header = JSON.parse(raw.subarray(0, raw.indexOf(0x0a)).toString());
    expect(header.format).toBe("tfw1");
    expect(Object.keys(header)).toEqual(["format", "hyper", "tensors"]);
    const payload = raw.length - raw.indexOf(0x0a) - 1;
    expect(payload).toBe(totalParams(DEFAULT_HYPER) * 4);
  });

  it("rejects a non-positive norm.std on export", () => {
    const bad = params.slice();
    bad[bad.length - 1] = 0;
    expect(() => saveWeights(path.join(tmp, "bad.tfw"), DEFAULT_HYPER, bad))
      .toThrow(/norm.std/);
  });

  it("rejects foreign files on load", () => {
    const file = path.join(tmp, "alien.tfw");
    fs.writeFileSync(file, '{"format": "nope"}\n');
    expect(() => loadWeights(file)).toThrow(/not a trajectory/);
  });
});
