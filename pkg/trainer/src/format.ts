/** Weight container format shared with the inference side.
 *
 * A file is one JSON header line (hyperparameters + tensor table), a
 * newline, then raw little-endian float32 payload. Tensor order in the
 * payload follows the canonical table below.
 */
import * as fs from "node:fs";

export const FORMAT_TAG = "tfw1";

export interface Hyper {
  window: number;
  features: number;
  d_model: number;
  n_heads: number;
  ffn_dim: number;
}

export const DEFAULT_HYPER: Hyper = {
  window: 6,
  features: 9,
  d_model: 32,
  n_heads: 2,
  ffn_dim: 64,
};

export interface TensorSpec {
  name: string;
  shape: number[];
  offset: number; // element offset into the flat buffer
  size: number;
}

/** Canonical tensor names and shapes, in container order. */
export function tensorTable(h: Hyper): TensorSpec[] {
  const f = h.features, d = h.d_model, ffn = h.ffn_dim, w = h.window;
  const raw: Array<[string, number[]]> = [
    ["embed.w", [f, d]],
    ["embed.b", [d]],
    ["pos", [w, d]],
  ];
  for (const blk of ["enc", "dec"]) {
    for (const proj of ["q", "k", "v", "o"]) {
      raw.push([`${blk}.attn.w${proj}`, [d, d]]);
      raw.push([`${blk}.attn.b${proj}`, [d]]);
    }
    raw.push([`${blk}.ln1.g`, [d]], [`${blk}.ln1.b`, [d]]);
    raw.push([`${blk}.ln2.g`, [d]], [`${blk}.ln2.b`, [d]]);
    raw.push([`${blk}.ffn.w1`, [d, ffn]], [`${blk}.ffn.b1`, [ffn]]);
    raw.push([`${blk}.ffn.w2`, [ffn, d]], [`${blk}.ffn.b2`, [d]]);
  }
  raw.push(["head.w", [d, 2]], ["head.b", [2]]);
  raw.push(["norm.mean", [f]], ["norm.std", [f]]);

  const table: TensorSpec[] = [];
  let offset = 0;
  for (const [name, shape] of raw) {
    const size = shape.reduce((a, b) => a * b, 1);
    table.push({ name, shape, offset, size });
    offset += size;
  }
  return table;
}

export function totalParams(h: Hyper): number {
  const t = tensorTable(h);
  const last = t[t.length - 1];
  return last.offset + last.size;
}

export function tensorOffsets(h: Hyper): Map<string, TensorSpec> {
  const m = new Map<string, TensorSpec>();
  for (const spec of tensorTable(h)) m.set(spec.name, spec);
  return m;
}

/** JSON.stringify with keys sorted at every level, so identical content
 * always produces identical bytes. */
export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(", ") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const body = keys.map((k) => JSON.stringify(k) + ": " + stableStringify(obj[k]));
  return "{" + body.join(", ") + "}";
}

/** Round every parameter to float32 precision (what export will store). */
export function roundToF32(params: Float64Array): Float64Array {
  const out = new Float64Array(params.length);
  for (let i = 0; i < params.length; i++) out[i] = Math.fround(params[i]);
  return out;
}

export function saveWeights(path: string, h: Hyper, params: Float64Array): void {
  const table = tensorTable(h);
  if (params.length !== totalParams(h)) {
    throw new Error(
      `parameter buffer has ${params.length} values, table wants ${totalParams(h)}`);
  }
  const stdSpec = table.find((t) => t.name === "norm.std")!;
  for (let i = 0; i < stdSpec.size; i++) {
    if (!(params[stdSpec.offset + i] > 0)) {
      throw new Error("norm.std must be strictly positive before export");
    }
  }
  const header = {
    format: FORMAT_TAG,
    hyper: { ...h },
    tensors: table.map((t) => ({
      name: t.name,
      shape: t.shape,
      offset: t.offset,
      count: t.size,
    })),
  };
  const payload = Buffer.alloc(params.length * 4);
  for (let i = 0; i < params.length; i++) {
    const v = Math.fround(params[i]);
    if (!Number.isFinite(v)) {
      throw new Error(`non-finite parameter at flat index ${i}`);
    }
    payload.writeFloatLE(v, i * 4);
  }
  const head = Buffer.from(stableStringify(header) + "\n", "utf8");
  fs.writeFileSync(path, Buffer.concat([head, payload]));
}

export function loadWeights(path: string): { hyper: Hyper; params: Float64Array } {
  const raw = fs.readFileSync(path);
  const nl = raw.indexOf(0x0a);
  if (nl < 0) throw new Error("weight file has no header line");
  const header = JSON.parse(raw.subarray(0, nl).toString("utf8"));
  if (header.format !== FORMAT_TAG) {
    throw new Error("not a trajectory-classifier weight file");
  }
  const hyper: Hyper = {
    window: header.hyper.window | 0,
    features: header.hyper.features | 0,
    d_model: header.hyper.d_model | 0,
    n_heads: header.hyper.n_heads | 0,
    ffn_dim: header.hyper.ffn_dim | 0,
  };
  const params = new Float64Array(totalParams(hyper));
  const body = raw.subarray(nl + 1);
  for (const ent of header.tensors) {
    const off = ent.offset | 0, count = ent.count | 0;
    if ((off + count) * 4 > body.length) {
      throw new Error(`tensor ${ent.name} overruns the payload`);
    }
    for (let i = 0; i < count; i++) {
      params[off + i] = body.readFloatLE((off + i) * 4);
    }
  }
  return { hyper, params };
}
