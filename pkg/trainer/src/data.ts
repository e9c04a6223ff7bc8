/** Window dataset construction from pipeline run dumps.
 *
 * Input is a pair of files produced by a tracking run: per-frame track
 * observations (track id, status, raw object vector) and ground truth
 * (true target positions per frame). Windows are consecutive runs of
 * observations within a single track, labelled by how often the track
 * sat on a real target during the window.
 */
import * as fs from "node:fs";
import * as path from "node:path";
import * as zlib from "node:zlib";
import { Rng, shuffle } from "./rng.js";

export interface WindowRec {
  caseId: string; // one track = one case; folds split on this
  label: number; // 1 if the window overlaps a true target
  w: number[]; // window*features floats, row-major, raw (unnormalised)
}

export interface BuildOptions {
  window: number;
  features: number;
  matchRadius: number; // metres; an observation counts as on-target inside this
  minMatched: number; // matched observations needed for a true label
}

export const DEFAULT_BUILD: BuildOptions = {
  window: 6,
  features: 9,
  matchRadius: 10.0,
  minMatched: 3,
};

export function readJsonl(file: string): any[] {
  let buf = fs.readFileSync(file);
  if (file.endsWith(".gz")) buf = zlib.gunzipSync(buf);
  const out: any[] = [];
  for (const line of buf.toString("utf8").split("\n")) {
    const s = line.trim();
    if (s.length > 0) out.push(JSON.parse(s));
  }
  return out;
}

interface Obs {
  t: number;
  obj: number[];
  matched: boolean;
}

/** Sliding windows over each confirmed track's observation sequence.
 *
 * Truth records carry target positions per frame under "uavs"
 * ([id, x, y, z, vx, vy, vz] rows). An observation matches truth when
 * its position is within matchRadius of any target at that frame.
 * Windows never span two tracks, and a track's windows all share one
 * case id so cross-validation can split on whole tracks.
 */
export function buildWindows(trackObsFile: string, truthFile: string,
                             casePrefix: string,
                             opts: BuildOptions = DEFAULT_BUILD): WindowRec[] {
  const truthByFrame = new Map<number, number[][]>();
  for (const rec of readJsonl(truthFile)) {
    truthByFrame.set(rec.t, rec.uavs ?? []);
  }

  const byTrack = new Map<number, Obs[]>();
  for (const rec of readJsonl(trackObsFile)) {
    if (rec.status !== "confirmed" && rec.status !== "verified") continue;
    const obj: number[] = rec.obj;
    const uavs = truthByFrame.get(rec.t) ?? [];
    let matched = false;
    for (const u of uavs) {
      const dx = obj[0] - u[1], dy = obj[1] - u[2], dz = obj[2] - u[3];
      if (dx * dx + dy * dy + dz * dz <= opts.matchRadius * opts.matchRadius) {
        matched = true;
        break;
      }
    }
    let lst = byTrack.get(rec.id);
    if (!lst) {
      lst = [];
      byTrack.set(rec.id, lst);
    }
    lst.push({ t: rec.t, obj, matched });
  }

  const out: WindowRec[] = [];
  for (const [tid, obsList] of byTrack) {
    obsList.sort((a, b) => a.t - b.t);
    if (obsList.length < opts.window) continue;
    const caseId = `${casePrefix}:${tid}`;
    for (let s = 0; s + opts.window <= obsList.length; s++) {
      let nMatched = 0;
      const w: number[] = [];
      for (let i = 0; i < opts.window; i++) {
        const ob = obsList[s + i];
        if (ob.obj.length !== opts.features) {
          throw new Error(
            `track ${tid} frame ${ob.t}: expected ${opts.features} ` +
            `features, got ${ob.obj.length}`);
        }
        if (ob.matched) nMatched++;
        for (const vv of ob.obj) w.push(vv);
      }
      out.push({ caseId, label: nMatched >= opts.minMatched ? 1 : 0, w });
    }
  }
  return out;
}

/** Cap windows per case, then subsample the majority label to even the
 * classes out. Subsampling drops windows, not cases, so a long track
 * shrinks rather than vanishing; cases that do end up empty are gone.
 */
export function thinAndBalance(recs: WindowRec[], rng: Rng,
                               maxPerCase = 30,
                               targetFrac = 0.5): WindowRec[] {
  const byCase = new Map<string, WindowRec[]>();
  for (const r of recs) {
    let lst = byCase.get(r.caseId);
    if (!lst) {
      lst = [];
      byCase.set(r.caseId, lst);
    }
    lst.push(r);
  }
  let kept: WindowRec[] = [];
  for (const lst of byCase.values()) {
    if (lst.length > maxPerCase) {
      shuffle(rng, lst);
      lst.length = maxPerCase;
    }
    kept.push(...lst);
  }

  const pos = kept.filter((r) => r.label === 1);
  const neg = kept.filter((r) => r.label === 0);
  const [major, minor] = pos.length >= neg.length ? [pos, neg] : [neg, pos];
  // keep the majority at targetFrac of the final total
  const wantMajor = Math.round(
    (minor.length * targetFrac) / (1 - targetFrac));
  if (major.length > wantMajor) {
    shuffle(rng, major);
    major.length = wantMajor;
  }
  kept = [...pos.length >= neg.length ? major : minor,
          ...pos.length >= neg.length ? minor : major];
  shuffle(rng, kept);
  return kept;
}

export function saveDataset(file: string, recs: WindowRec[]): void {
  const lines = recs.map((r) =>
    JSON.stringify({ case: r.caseId, label: r.label, w: r.w }));
  let buf: Buffer = Buffer.from(lines.join("\n") + "\n", "utf8");
  if (file.endsWith(".gz")) buf = zlib.gzipSync(buf, { level: 6 });
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, buf);
}

export function loadDataset(file: string): WindowRec[] {
  return readJsonl(file).map((r) => ({
    caseId: r.case,
    label: r.label,
    w: r.w,
  }));
}

/** Deterministic case-level folds: every window of a case lands in the
 * same fold. Returns, per fold, the set of case ids held out. */
export function caseFolds(recs: WindowRec[], k: number,
                          rng: Rng): Set<string>[] {
  const cases = [...new Set(recs.map((r) => r.caseId))].sort();
  shuffle(rng, cases);
  const folds: Set<string>[] = [];
  for (let i = 0; i < k; i++) folds.push(new Set());
  cases.forEach((c, i) => folds[i % k].add(c));
  return folds;
}

export function labelFraction(recs: WindowRec[]): number {
  if (recs.length === 0) return 0;
  return recs.filter((r) => r.label === 1).length / recs.length;
}
