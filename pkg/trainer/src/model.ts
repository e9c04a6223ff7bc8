/** The trajectory window classifier and its gradients, from scratch.
 *
 * One encoder layer self-attends over the observation window; a single
 * query (the newest observation's embedding) cross-attends into the
 * encoder output; both use pre-norm residuals. Training math runs in
 * float64. A separate float32-emulating forward reproduces what the
 * inference side computes from the exported file, used to record
 * parity vectors.
 *
 * Preprocessing is part of the model: positions are re-expressed
 * relative to the window's first observation, then all features are
 * standardised with stats stored alongside the weights.
 */
import { Hyper, tensorOffsets, totalParams } from "./format.js";
import { Rng, uniform } from "./rng.js";

export const LN_EPS = 1e-5;

interface Offsets {
  embedW: number; embedB: number; pos: number;
  encWq: number; encBq: number; encWk: number; encBk: number;
  encWv: number; encBv: number; encWo: number; encBo: number;
  encLn1g: number; encLn1b: number; encLn2g: number; encLn2b: number;
  encW1: number; encB1: number; encW2: number; encB2: number;
  decWq: number; decBq: number; decWk: number; decBk: number;
  decWv: number; decBv: number; decWo: number; decBo: number;
  decLn1g: number; decLn1b: number; decLn2g: number; decLn2b: number;
  decW1: number; decB1: number; decW2: number; decB2: number;
  headW: number; headB: number; normMean: number; normStd: number;
}

export interface Model {
  hyper: Hyper;
  off: Offsets;
  nParams: number;
  nTrainable: number; // norm stats sit at the end and are not trained
}

export function makeModel(hyper: Hyper): Model {
  const t = tensorOffsets(hyper);
  const o = (name: string) => {
    const spec = t.get(name);
    if (!spec) throw new Error(`missing tensor ${name}`);
    return spec.offset;
  };
  const off: Offsets = {
    embedW: o("embed.w"), embedB: o("embed.b"), pos: o("pos"),
    encWq: o("enc.attn.wq"), encBq: o("enc.attn.bq"),
    encWk: o("enc.attn.wk"), encBk: o("enc.attn.bk"),
    encWv: o("enc.attn.wv"), encBv: o("enc.attn.bv"),
    encWo: o("enc.attn.wo"), encBo: o("enc.attn.bo"),
    encLn1g: o("enc.ln1.g"), encLn1b: o("enc.ln1.b"),
    encLn2g: o("enc.ln2.g"), encLn2b: o("enc.ln2.b"),
    encW1: o("enc.ffn.w1"), encB1: o("enc.ffn.b1"),
    encW2: o("enc.ffn.w2"), encB2: o("enc.ffn.b2"),
    decWq: o("dec.attn.wq"), decBq: o("dec.attn.bq"),
    decWk: o("dec.attn.wk"), decBk: o("dec.attn.bk"),
    decWv: o("dec.attn.wv"), decBv: o("dec.attn.bv"),
    decWo: o("dec.attn.wo"), decBo: o("dec.attn.bo"),
    decLn1g: o("dec.ln1.g"), decLn1b: o("dec.ln1.b"),
    decLn2g: o("dec.ln2.g"), decLn2b: o("dec.ln2.b"),
    decW1: o("dec.ffn.w1"), decB1: o("dec.ffn.b1"),
    decW2: o("dec.ffn.w2"), decB2: o("dec.ffn.b2"),
    headW: o("head.w"), headB: o("head.b"),
    normMean: o("norm.mean"), normStd: o("norm.std"),
  };
  return {
    hyper,
    off,
    nParams: totalParams(hyper),
    nTrainable: off.normMean,
  };
}

/** Glorot-uniform matrices, zero biases, unit layer-norm gains,
 * small positional offsets; norm stats start as identity. */
export function initParams(m: Model, rng: Rng): Float64Array {
  const { window: w, features: f, d_model: d, ffn_dim: ffn } = m.hyper;
  const p = new Float64Array(m.nParams);
  const o = m.off;
  const glorot = (off: number, fanIn: number, fanOut: number) => {
    const limit = Math.sqrt(6 / (fanIn + fanOut));
    for (let i = 0; i < fanIn * fanOut; i++) p[off + i] = uniform(rng, limit);
  };
  glorot(o.embedW, f, d);
  for (let i = 0; i < w * d; i++) p[o.pos + i] = uniform(rng, 0.02);
  for (const blk of [
    { wq: o.encWq, wk: o.encWk, wv: o.encWv, wo: o.encWo,
      ln1g: o.encLn1g, ln2g: o.encLn2g, w1: o.encW1, w2: o.encW2 },
    { wq: o.decWq, wk: o.decWk, wv: o.decWv, wo: o.decWo,
      ln1g: o.decLn1g, ln2g: o.decLn2g, w1: o.decW1, w2: o.decW2 },
  ]) {
    glorot(blk.wq, d, d);
    glorot(blk.wk, d, d);
    glorot(blk.wv, d, d);
    glorot(blk.wo, d, d);
    for (let i = 0; i < d; i++) p[blk.ln1g + i] = 1;
    for (let i = 0; i < d; i++) p[blk.ln2g + i] = 1;
    glorot(blk.w1, d, ffn);
    glorot(blk.w2, ffn, d);
  }
  glorot(o.headW, d, 2);
  for (let i = 0; i < f; i++) p[o.normStd + i] = 1;
  return p;
}

export function setNormStats(m: Model, p: Float64Array,
                             mean: number[], std: number[]): void {
  const f = m.hyper.features;
  for (let i = 0; i < f; i++) {
    p[m.off.normMean + i] = mean[i];
    p[m.off.normStd + i] = Math.max(std[i], 1e-6);
  }
}

/** Scratch buffers for one forward/backward pass, reused across calls. */
export class Workspace {
  x: Float64Array; e: Float64Array;
  ai: Float64Array; aiXhat: Float64Array; aiInv: Float64Array;
  q: Float64Array; k: Float64Array; v: Float64Array;
  att: Float64Array; ctx: Float64Array; sa: Float64Array; a: Float64Array;
  fi: Float64Array; fiXhat: Float64Array; fiInv: Float64Array;
  h1: Float64Array; hr: Float64Array; ff: Float64Array; encOut: Float64Array;
  q0: Float64Array; cq: Float64Array; cqXhat: Float64Array; cqInv: Float64Array;
  qd: Float64Array; kd: Float64Array; vd: Float64Array;
  attd: Float64Array; ctxd: Float64Array; ca: Float64Array; c: Float64Array;
  f2: Float64Array; f2Xhat: Float64Array; f2Inv: Float64Array;
  h2: Float64Array; h2r: Float64Array; ff2: Float64Array; dvec: Float64Array;
  logits: Float64Array; probs: Float64Array;
  // backward scratch
  de: Float64Array; dai: Float64Array; dq: Float64Array; dk: Float64Array;
  dv: Float64Array; dctx: Float64Array; dsa: Float64Array; da: Float64Array;
  dfi: Float64Array; dh1: Float64Array; dff: Float64Array; dEncOut: Float64Array;
  dq0: Float64Array; dcq: Float64Array; dqd: Float64Array; dkd: Float64Array;
  dvd: Float64Array; dctxd: Float64Array; dc: Float64Array; df2: Float64Array;
  dh2: Float64Array; dtmpRow: Float64Array;

  constructor(h: Hyper) {
    const w = h.window, f = h.features, d = h.d_model, ffn = h.ffn_dim;
    const nh = h.n_heads;
    this.x = new Float64Array(w * f);
    this.e = new Float64Array(w * d);
    this.ai = new Float64Array(w * d);
    this.aiXhat = new Float64Array(w * d);
    this.aiInv = new Float64Array(w);
    this.q = new Float64Array(w * d);
    this.k = new Float64Array(w * d);
    this.v = new Float64Array(w * d);
    this.att = new Float64Array(nh * w * w);
    this.ctx = new Float64Array(w * d);
    this.sa = new Float64Array(w * d);
    this.a = new Float64Array(w * d);
    this.fi = new Float64Array(w * d);
    this.fiXhat = new Float64Array(w * d);
    this.fiInv = new Float64Array(w);
    this.h1 = new Float64Array(w * ffn);
    this.hr = new Float64Array(w * ffn);
    this.ff = new Float64Array(w * d);
    this.encOut = new Float64Array(w * d);
    this.q0 = new Float64Array(d);
    this.cq = new Float64Array(d);
    this.cqXhat = new Float64Array(d);
    this.cqInv = new Float64Array(1);
    this.qd = new Float64Array(d);
    this.kd = new Float64Array(w * d);
    this.vd = new Float64Array(w * d);
    this.attd = new Float64Array(nh * w);
    this.ctxd = new Float64Array(d);
    this.ca = new Float64Array(d);
    this.c = new Float64Array(d);
    this.f2 = new Float64Array(d);
    this.f2Xhat = new Float64Array(d);
    this.f2Inv = new Float64Array(1);
    this.h2 = new Float64Array(ffn);
    this.h2r = new Float64Array(ffn);
    this.ff2 = new Float64Array(d);
    this.dvec = new Float64Array(d);
    this.logits = new Float64Array(2);
    this.probs = new Float64Array(2);
    this.de = new Float64Array(w * d);
    this.dai = new Float64Array(w * d);
    this.dq = new Float64Array(w * d);
    this.dk = new Float64Array(w * d);
    this.dv = new Float64Array(w * d);
    this.dctx = new Float64Array(w * d);
    this.dsa = new Float64Array(w * d);
    this.da = new Float64Array(w * d);
    this.dfi = new Float64Array(w * d);
    this.dh1 = new Float64Array(w * ffn);
    this.dff = new Float64Array(w * d);
    this.dEncOut = new Float64Array(w * d);
    this.dq0 = new Float64Array(d);
    this.dcq = new Float64Array(d);
    this.dqd = new Float64Array(d);
    this.dkd = new Float64Array(w * d);
    this.dvd = new Float64Array(w * d);
    this.dctxd = new Float64Array(d);
    this.dc = new Float64Array(d);
    this.df2 = new Float64Array(d);
    this.dh2 = new Float64Array(ffn);
    this.dtmpRow = new Float64Array(Math.max(w, d, ffn));
  }
}

function lnRows(p: Float64Array, src: Float64Array, n: number, d: number,
                gOff: number, bOff: number, xhat: Float64Array,
                inv: Float64Array, out: Float64Array): void {
  for (let i = 0; i < n; i++) {
    let mu = 0;
    for (let j = 0; j < d; j++) mu += src[i * d + j];
    mu /= d;
    let va = 0;
    for (let j = 0; j < d; j++) {
      const dj = src[i * d + j] - mu;
      va += dj * dj;
    }
    va /= d;
    const iv = 1 / Math.sqrt(va + LN_EPS);
    inv[i] = iv;
    for (let j = 0; j < d; j++) {
      const xh = (src[i * d + j] - mu) * iv;
      xhat[i * d + j] = xh;
      out[i * d + j] = xh * p[gOff + j] + p[bOff + j];
    }
  }
}

/** dL/dsrc for layer norm, accumulated into dSrc; also fills gain/bias
 * gradients. */
function lnBackward(p: Float64Array, g: Float64Array, dOut: Float64Array,
                    n: number, d: number, gOff: number, bOff: number,
                    xhat: Float64Array, inv: Float64Array,
                    dSrc: Float64Array): void {
  for (let i = 0; i < n; i++) {
    let m1 = 0, m2 = 0;
    for (let j = 0; j < d; j++) {
      const idx = i * d + j;
      const dy = dOut[idx];
      g[gOff + j] += dy * xhat[idx];
      g[bOff + j] += dy;
      const dxh = dy * p[gOff + j];
      m1 += dxh;
      m2 += dxh * xhat[idx];
    }
    m1 /= d;
    m2 /= d;
    const iv = inv[i];
    for (let j = 0; j < d; j++) {
      const idx = i * d + j;
      const dxh = dOut[idx] * p[gOff + j];
      dSrc[idx] += iv * (dxh - m1 - xhat[idx] * m2);
    }
  }
}

function project(p: Float64Array, src: Float64Array, n: number, dIn: number,
                 dOut: number, wOff: number, bOff: number,
                 dst: Float64Array): void {
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < dOut; c++) {
      let acc = p[bOff + c];
      for (let j = 0; j < dIn; j++) {
        acc += src[i * dIn + j] * p[wOff + j * dOut + c];
      }
      dst[i * dOut + c] = acc;
    }
  }
}

/** dSrc += dDst @ W^T, dW += src^T dDst, db += column sums of dDst. */
function projectBackward(p: Float64Array, g: Float64Array, src: Float64Array,
                         dDst: Float64Array, n: number, dIn: number,
                         dOut: number, wOff: number, bOff: number,
                         dSrc: Float64Array): void {
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < dOut; c++) {
      const dd = dDst[i * dOut + c];
      if (dd === 0) continue;
      g[bOff + c] += dd;
      for (let j = 0; j < dIn; j++) {
        g[wOff + j * dOut + c] += src[i * dIn + j] * dd;
        dSrc[i * dIn + j] += dd * p[wOff + j * dOut + c];
      }
    }
  }
}

function attention(nHeads: number, dh: number, d: number,
                   q: Float64Array, nQ: number, k: Float64Array,
                   v: Float64Array, nK: number, att: Float64Array,
                   ctx: Float64Array): void {
  const scale = 1 / Math.sqrt(dh);
  for (let h = 0; h < nHeads; h++) {
    const ho = h * dh;
    for (let i = 0; i < nQ; i++) {
      const base = h * nQ * nK + i * nK;
      let mx = -Infinity;
      for (let j = 0; j < nK; j++) {
        let s = 0;
        for (let u = 0; u < dh; u++) s += q[i * d + ho + u] * k[j * d + ho + u];
        s *= scale;
        att[base + j] = s;
        if (s > mx) mx = s;
      }
      let tot = 0;
      for (let j = 0; j < nK; j++) {
        const e = Math.exp(att[base + j] - mx);
        att[base + j] = e;
        tot += e;
      }
      for (let j = 0; j < nK; j++) att[base + j] /= tot;
      for (let u = 0; u < dh; u++) {
        let acc = 0;
        for (let j = 0; j < nK; j++) acc += att[base + j] * v[j * d + ho + u];
        ctx[i * d + ho + u] = acc;
      }
    }
  }
}

function attentionBackward(nHeads: number, dh: number, d: number,
                           q: Float64Array, nQ: number, k: Float64Array,
                           v: Float64Array, nK: number, att: Float64Array,
                           dCtx: Float64Array, dQ: Float64Array,
                           dK: Float64Array, dV: Float64Array,
                           scratch: Float64Array): void {
  const scale = 1 / Math.sqrt(dh);
  for (let h = 0; h < nHeads; h++) {
    const ho = h * dh;
    for (let i = 0; i < nQ; i++) {
      const base = h * nQ * nK + i * nK;
      // datt_j = <dctx_i, v_j>; dv_j += att_ij * dctx_i
      let dot = 0;
      for (let j = 0; j < nK; j++) {
        let s = 0;
        for (let u = 0; u < dh; u++) {
          const dcu = dCtx[i * d + ho + u];
          s += dcu * v[j * d + ho + u];
          dV[j * d + ho + u] += att[base + j] * dcu;
        }
        scratch[j] = s;
        dot += s * att[base + j];
      }
      for (let j = 0; j < nK; j++) {
        const ds = att[base + j] * (scratch[j] - dot);
        for (let u = 0; u < dh; u++) {
          dQ[i * d + ho + u] += scale * ds * k[j * d + ho + u];
          dK[j * d + ho + u] += scale * ds * q[i * d + ho + u];
        }
      }
    }
  }
}

/** Full forward in float64, caching every intermediate in ws.
 * Returns probs = [p_false, p_true]. */
export function forward(m: Model, p: Float64Array, window: ArrayLike<number>,
                        ws: Workspace): Float64Array {
  const { window: w, features: f, d_model: d, n_heads: nh, ffn_dim: ffn } =
    m.hyper;
  const dh = d / nh;
  const o = m.off;

  // relative positions, then standardise
  const bx = window[0], by = window[1], bz = window[2];
  for (let i = 0; i < w; i++) {
    for (let j = 0; j < f; j++) {
      let vv = window[i * f + j];
      if (j < 3) vv -= j === 0 ? bx : j === 1 ? by : bz;
      ws.x[i * f + j] = (vv - p[o.normMean + j]) / p[o.normStd + j];
    }
  }

  // embedding + positional offsets
  for (let i = 0; i < w; i++) {
    for (let c = 0; c < d; c++) {
      let acc = p[o.embedB + c] + p[o.pos + i * d + c];
      for (let j = 0; j < f; j++) {
        acc += ws.x[i * f + j] * p[o.embedW + j * d + c];
      }
      ws.e[i * d + c] = acc;
    }
  }

  // encoder block
  lnRows(p, ws.e, w, d, o.encLn1g, o.encLn1b, ws.aiXhat, ws.aiInv, ws.ai);
  project(p, ws.ai, w, d, d, o.encWq, o.encBq, ws.q);
  project(p, ws.ai, w, d, d, o.encWk, o.encBk, ws.k);
  project(p, ws.ai, w, d, d, o.encWv, o.encBv, ws.v);
  attention(nh, dh, d, ws.q, w, ws.k, ws.v, w, ws.att, ws.ctx);
  project(p, ws.ctx, w, d, d, o.encWo, o.encBo, ws.sa);
  for (let i = 0; i < w * d; i++) ws.a[i] = ws.e[i] + ws.sa[i];
  lnRows(p, ws.a, w, d, o.encLn2g, o.encLn2b, ws.fiXhat, ws.fiInv, ws.fi);
  project(p, ws.fi, w, d, ffn, o.encW1, o.encB1, ws.h1);
  for (let i = 0; i < w * ffn; i++) ws.hr[i] = ws.h1[i] > 0 ? ws.h1[i] : 0;
  project(p, ws.hr, w, ffn, d, o.encW2, o.encB2, ws.ff);
  for (let i = 0; i < w * d; i++) ws.encOut[i] = ws.a[i] + ws.ff[i];

  // decoder: one query from the newest observation's embedding
  for (let c = 0; c < d; c++) ws.q0[c] = ws.e[(w - 1) * d + c];
  lnRows(p, ws.q0, 1, d, o.decLn1g, o.decLn1b, ws.cqXhat, ws.cqInv, ws.cq);
  project(p, ws.cq, 1, d, d, o.decWq, o.decBq, ws.qd);
  project(p, ws.encOut, w, d, d, o.decWk, o.decBk, ws.kd);
  project(p, ws.encOut, w, d, d, o.decWv, o.decBv, ws.vd);
  attention(nh, dh, d, ws.qd, 1, ws.kd, ws.vd, w, ws.attd, ws.ctxd);
  project(p, ws.ctxd, 1, d, d, o.decWo, o.decBo, ws.ca);
  for (let c = 0; c < d; c++) ws.c[c] = ws.q0[c] + ws.ca[c];
  lnRows(p, ws.c, 1, d, o.decLn2g, o.decLn2b, ws.f2Xhat, ws.f2Inv, ws.f2);
  project(p, ws.f2, 1, d, ffn, o.decW1, o.decB1, ws.h2);
  for (let i = 0; i < ffn; i++) ws.h2r[i] = ws.h2[i] > 0 ? ws.h2[i] : 0;
  project(p, ws.h2r, 1, ffn, d, o.decW2, o.decB2, ws.ff2);
  for (let c = 0; c < d; c++) ws.dvec[c] = ws.c[c] + ws.ff2[c];

  for (let c2 = 0; c2 < 2; c2++) {
    let acc = p[o.headB + c2];
    for (let j = 0; j < d; j++) acc += ws.dvec[j] * p[o.headW + j * 2 + c2];
    ws.logits[c2] = acc;
  }
  const mx = Math.max(ws.logits[0], ws.logits[1]);
  const e0 = Math.exp(ws.logits[0] - mx);
  const e1 = Math.exp(ws.logits[1] - mx);
  ws.probs[0] = e0 / (e0 + e1);
  ws.probs[1] = e1 / (e0 + e1);
  return ws.probs;
}

/** Cross-entropy gradient of the last forward pass, accumulated into g. */
export function backward(m: Model, p: Float64Array, g: Float64Array,
                         ws: Workspace, label: number): void {
  const { window: w, features: f, d_model: d, n_heads: nh, ffn_dim: ffn } =
    m.hyper;
  const dh = d / nh;
  const o = m.off;

  const dl0 = ws.probs[0] - (label === 0 ? 1 : 0);
  const dl1 = ws.probs[1] - (label === 1 ? 1 : 0);
  const dd = ws.dtmpRow;
  for (let j = 0; j < d; j++) {
    g[o.headW + j * 2] += ws.dvec[j] * dl0;
    g[o.headW + j * 2 + 1] += ws.dvec[j] * dl1;
    dd[j] = dl0 * p[o.headW + j * 2] + dl1 * p[o.headW + j * 2 + 1];
  }
  g[o.headB] += dl0;
  g[o.headB + 1] += dl1;

  // dvec = c + ff2
  ws.dc.fill(0);
  ws.df2.fill(0);
  for (let j = 0; j < d; j++) ws.dc[j] = dd[j];
  // decoder ffn
  ws.dh2.fill(0);
  for (let c = 0; c < d; c++) {
    const dv2 = dd[c];
    if (dv2 === 0) continue;
    g[o.decB2 + c] += dv2;
    for (let u = 0; u < ffn; u++) {
      g[o.decW2 + u * d + c] += ws.h2r[u] * dv2;
      ws.dh2[u] += dv2 * p[o.decW2 + u * d + c];
    }
  }
  for (let u = 0; u < ffn; u++) if (ws.h2[u] <= 0) ws.dh2[u] = 0;
  for (let u = 0; u < ffn; u++) {
    const dv2 = ws.dh2[u];
    if (dv2 === 0) continue;
    g[o.decB1 + u] += dv2;
    for (let c = 0; c < d; c++) {
      g[o.decW1 + c * ffn + u] += ws.f2[c] * dv2;
      ws.df2[c] += dv2 * p[o.decW1 + c * ffn + u];
    }
  }
  lnBackward(p, g, ws.df2, 1, d, o.decLn2g, o.decLn2b, ws.f2Xhat, ws.f2Inv,
             ws.dc);

  // c = q0 + ca
  ws.dq0.fill(0);
  for (let j = 0; j < d; j++) ws.dq0[j] = ws.dc[j];
  ws.dctxd.fill(0);
  projectBackward(p, g, ws.ctxd, ws.dc, 1, d, d, o.decWo, o.decBo, ws.dctxd);

  ws.dqd.fill(0);
  ws.dkd.fill(0);
  ws.dvd.fill(0);
  attentionBackward(nh, dh, d, ws.qd, 1, ws.kd, ws.vd, w, ws.attd, ws.dctxd,
                    ws.dqd, ws.dkd, ws.dvd, ws.dtmpRow);

  ws.dcq.fill(0);
  projectBackward(p, g, ws.cq, ws.dqd, 1, d, d, o.decWq, o.decBq, ws.dcq);
  ws.dEncOut.fill(0);
  projectBackward(p, g, ws.encOut, ws.dkd, w, d, d, o.decWk, o.decBk,
                  ws.dEncOut);
  projectBackward(p, g, ws.encOut, ws.dvd, w, d, d, o.decWv, o.decBv,
                  ws.dEncOut);
  lnBackward(p, g, ws.dcq, 1, d, o.decLn1g, o.decLn1b, ws.cqXhat, ws.cqInv,
             ws.dq0);

  // encoder backward
  ws.de.fill(0);
  for (let j = 0; j < d; j++) ws.de[(w - 1) * d + j] += ws.dq0[j];

  // encOut = a + ff
  ws.da.fill(0);
  ws.dfi.fill(0);
  ws.dh1.fill(0);
  for (let i = 0; i < w * d; i++) ws.da[i] = ws.dEncOut[i];
  for (let i = 0; i < w; i++) {
    for (let c = 0; c < d; c++) {
      const dv2 = ws.dEncOut[i * d + c];
      if (dv2 === 0) continue;
      g[o.encB2 + c] += dv2;
      for (let u = 0; u < ffn; u++) {
        g[o.encW2 + u * d + c] += ws.hr[i * ffn + u] * dv2;
        ws.dh1[i * ffn + u] += dv2 * p[o.encW2 + u * d + c];
      }
    }
  }
  for (let i = 0; i < w * ffn; i++) if (ws.h1[i] <= 0) ws.dh1[i] = 0;
  for (let i = 0; i < w; i++) {
    for (let u = 0; u < ffn; u++) {
      const dv2 = ws.dh1[i * ffn + u];
      if (dv2 === 0) continue;
      g[o.encB1 + u] += dv2;
      for (let c = 0; c < d; c++) {
        g[o.encW1 + c * ffn + u] += ws.fi[i * d + c] * dv2;
        ws.dfi[i * d + c] += dv2 * p[o.encW1 + c * ffn + u];
      }
    }
  }
  lnBackward(p, g, ws.dfi, w, d, o.encLn2g, o.encLn2b, ws.fiXhat, ws.fiInv,
             ws.da);

  // a = e + sa
  for (let i = 0; i < w * d; i++) ws.de[i] += ws.da[i];
  ws.dctx.fill(0);
  projectBackward(p, g, ws.ctx, ws.da, w, d, d, o.encWo, o.encBo, ws.dctx);
  ws.dq.fill(0);
  ws.dk.fill(0);
  ws.dv.fill(0);
  attentionBackward(nh, dh, d, ws.q, w, ws.k, ws.v, w, ws.att, ws.dctx,
                    ws.dq, ws.dk, ws.dv, ws.dtmpRow);
  ws.dai.fill(0);
  projectBackward(p, g, ws.ai, ws.dq, w, d, d, o.encWq, o.encBq, ws.dai);
  projectBackward(p, g, ws.ai, ws.dk, w, d, d, o.encWk, o.encBk, ws.dai);
  projectBackward(p, g, ws.ai, ws.dv, w, d, d, o.encWv, o.encBv, ws.dai);
  lnBackward(p, g, ws.dai, w, d, o.encLn1g, o.encLn1b, ws.aiXhat, ws.aiInv,
             ws.de);

  // embedding
  for (let i = 0; i < w; i++) {
    for (let c = 0; c < d; c++) {
      const dv2 = ws.de[i * d + c];
      if (dv2 === 0) continue;
      g[o.pos + i * d + c] += dv2;
      g[o.embedB + c] += dv2;
      for (let j = 0; j < f; j++) {
        g[o.embedW + j * d + c] += ws.x[i * f + j] * dv2;
      }
    }
  }
}

export function crossEntropy(probs: Float64Array, label: number): number {
  return -Math.log(Math.max(probs[label], 1e-300));
}

// -- float32-emulating inference ---------------------------------------
//
// Mirrors the arithmetic the inference side performs on the exported
// float32 tensors: every intermediate value is rounded to float32.
// Used to record parity vectors so the two implementations can be
// compared at 1e-5 without fighting accumulated double-precision drift.

const fr = Math.fround;

function ln32(p: Float64Array, src: Float64Array, n: number, d: number,
              gOff: number, bOff: number, out: Float64Array): void {
  const eps = fr(LN_EPS);
  for (let i = 0; i < n; i++) {
    let mu = 0;
    for (let j = 0; j < d; j++) mu = fr(mu + src[i * d + j]);
    mu = fr(mu / d);
    let va = 0;
    for (let j = 0; j < d; j++) {
      const dj = fr(src[i * d + j] - mu);
      va = fr(va + fr(dj * dj));
    }
    va = fr(va / d);
    const sd = fr(Math.sqrt(fr(va + eps)));
    for (let j = 0; j < d; j++) {
      const xh = fr(fr(src[i * d + j] - mu) / sd);
      out[i * d + j] = fr(fr(xh * p[gOff + j]) + p[bOff + j]);
    }
  }
}

function project32(p: Float64Array, src: Float64Array, n: number,
                   dIn: number, dOut: number, wOff: number, bOff: number,
                   dst: Float64Array): void {
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < dOut; c++) {
      let acc = 0;
      for (let j = 0; j < dIn; j++) {
        acc = fr(acc + fr(src[i * dIn + j] * p[wOff + j * dOut + c]));
      }
      dst[i * dOut + c] = fr(acc + p[bOff + c]);
    }
  }
}

function attention32(nHeads: number, dh: number, d: number, q: Float64Array,
                     nQ: number, k: Float64Array, v: Float64Array,
                     nK: number, ctx: Float64Array, att: Float64Array): void {
  const scale = fr(1 / Math.sqrt(dh));
  for (let h = 0; h < nHeads; h++) {
    const ho = h * dh;
    for (let i = 0; i < nQ; i++) {
      let mx = -Infinity;
      for (let j = 0; j < nK; j++) {
        let s = 0;
        for (let u = 0; u < dh; u++) {
          s = fr(s + fr(q[i * d + ho + u] * k[j * d + ho + u]));
        }
        s = fr(s * scale);
        att[j] = s;
        if (s > mx) mx = s;
      }
      let tot = 0;
      for (let j = 0; j < nK; j++) {
        att[j] = fr(Math.exp(fr(att[j] - mx)));
        tot = fr(tot + att[j]);
      }
      for (let j = 0; j < nK; j++) att[j] = fr(att[j] / tot);
      for (let u = 0; u < dh; u++) {
        let acc = 0;
        for (let j = 0; j < nK; j++) {
          acc = fr(acc + fr(att[j] * v[j * d + ho + u]));
        }
        ctx[i * d + ho + u] = acc;
      }
    }
  }
}

/** [p_false, p_true] computed with float32 rounding throughout.
 * `p` must already hold float32-rounded parameters. */
export function inferF32(m: Model, p: Float64Array,
                         window: ArrayLike<number>): [number, number] {
  const { window: w, features: f, d_model: d, n_heads: nh, ffn_dim: ffn } =
    m.hyper;
  const dh = d / nh;
  const o = m.off;

  const x = new Float64Array(w * f);
  const bx = fr(window[0]), by = fr(window[1]), bz = fr(window[2]);
  for (let i = 0; i < w; i++) {
    for (let j = 0; j < f; j++) {
      let vv = fr(window[i * f + j]);
      if (j < 3) vv = fr(vv - (j === 0 ? bx : j === 1 ? by : bz));
      x[i * f + j] = fr(fr(vv - p[o.normMean + j]) / p[o.normStd + j]);
    }
  }

  const e = new Float64Array(w * d);
  for (let i = 0; i < w; i++) {
    for (let c = 0; c < d; c++) {
      let acc = 0;
      for (let j = 0; j < f; j++) {
        acc = fr(acc + fr(x[i * f + j] * p[o.embedW + j * d + c]));
      }
      e[i * d + c] = fr(fr(acc + p[o.embedB + c]) + p[o.pos + i * d + c]);
    }
  }

  const ai = new Float64Array(w * d);
  ln32(p, e, w, d, o.encLn1g, o.encLn1b, ai);
  const q = new Float64Array(w * d), k = new Float64Array(w * d),
    v = new Float64Array(w * d);
  project32(p, ai, w, d, d, o.encWq, o.encBq, q);
  project32(p, ai, w, d, d, o.encWk, o.encBk, k);
  project32(p, ai, w, d, d, o.encWv, o.encBv, v);
  const ctx = new Float64Array(w * d), attbuf = new Float64Array(w);
  attention32(nh, dh, d, q, w, k, v, w, ctx, attbuf);
  const sa = new Float64Array(w * d);
  project32(p, ctx, w, d, d, o.encWo, o.encBo, sa);
  const a = new Float64Array(w * d);
  for (let i = 0; i < w * d; i++) a[i] = fr(e[i] + sa[i]);
  const fi = new Float64Array(w * d);
  ln32(p, a, w, d, o.encLn2g, o.encLn2b, fi);
  const h1 = new Float64Array(w * ffn);
  project32(p, fi, w, d, ffn, o.encW1, o.encB1, h1);
  for (let i = 0; i < w * ffn; i++) if (h1[i] < 0) h1[i] = 0;
  const ff = new Float64Array(w * d);
  project32(p, h1, w, ffn, d, o.encW2, o.encB2, ff);
  const encOut = new Float64Array(w * d);
  for (let i = 0; i < w * d; i++) encOut[i] = fr(a[i] + ff[i]);

  const q0 = e.subarray((w - 1) * d, w * d);
  const cq = new Float64Array(d);
  ln32(p, q0, 1, d, o.decLn1g, o.decLn1b, cq);
  const qd = new Float64Array(d), kd = new Float64Array(w * d),
    vd = new Float64Array(w * d);
  project32(p, cq, 1, d, d, o.decWq, o.decBq, qd);
  project32(p, encOut, w, d, d, o.decWk, o.decBk, kd);
  project32(p, encOut, w, d, d, o.decWv, o.decBv, vd);
  const ctxd = new Float64Array(d);
  attention32(nh, dh, d, qd, 1, kd, vd, w, ctxd, attbuf);
  const ca = new Float64Array(d);
  project32(p, ctxd, 1, d, d, o.decWo, o.decBo, ca);
  const c = new Float64Array(d);
  for (let j = 0; j < d; j++) c[j] = fr(q0[j] + ca[j]);
  const f2 = new Float64Array(d);
  ln32(p, c, 1, d, o.decLn2g, o.decLn2b, f2);
  const h2 = new Float64Array(ffn);
  project32(p, f2, 1, d, ffn, o.decW1, o.decB1, h2);
  for (let i = 0; i < ffn; i++) if (h2[i] < 0) h2[i] = 0;
  const ff2 = new Float64Array(d);
  project32(p, h2, 1, ffn, d, o.decW2, o.decB2, ff2);
  const dvec = new Float64Array(d);
  for (let j = 0; j < d; j++) dvec[j] = fr(c[j] + ff2[j]);

  const logits = [0, 0];
  for (let c2 = 0; c2 < 2; c2++) {
    let acc = 0;
    for (let j = 0; j < d; j++) {
      acc = fr(acc + fr(dvec[j] * p[o.headW + j * 2 + c2]));
    }
    logits[c2] = fr(acc + p[o.headB + c2]);
  }
  const mx = Math.max(logits[0], logits[1]);
  const e0 = fr(Math.exp(fr(logits[0] - mx)));
  const e1 = fr(Math.exp(fr(logits[1] - mx)));
  const tot = fr(e0 + e1);
  return [fr(e0 / tot), fr(e1 / tot)];
}
