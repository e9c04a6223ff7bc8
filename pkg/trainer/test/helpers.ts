/** Shared toy-data builders for the test suite. */
import { WindowRec } from "../src/data.js";
import { Rng } from "../src/rng.js";

/** Linearly separable windows: one feature column carries the class,
 * the rest is noise and a drifting position. */
export function toyWindows(rng: Rng, n: number, window = 6,
                           features = 9): WindowRec[] {
  const out: WindowRec[] = [];
  for (let i = 0; i < n; i++) {
    const label = i % 2;
    const w: number[] = [];
    let px = rng() * 100, py = rng() * 100, pz = 50 + rng() * 10;
    const vx = rng() * 4 - 2, vy = rng() * 4 - 2;
    for (let r = 0; r < window; r++) {
      for (let j = 0; j < features; j++) {
        if (j === 0) w.push(px);
        else if (j === 1) w.push(py);
        else if (j === 2) w.push(pz);
        else if (j === 3) w.push((label ? 6 : -6) + rng() - 0.5);
        else w.push(rng() * 2 - 1);
      }
      px += vx;
      py += vy;
    }
    out.push({ caseId: `toy:${i}`, label, w });
  }
  return out;
}
