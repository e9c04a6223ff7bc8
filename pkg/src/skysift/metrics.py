"""Evaluation against ground truth at point, object, and track level.

Matching uses a 10 m association rule: predictions pair greedily with
truth in ascending distance order, one to one, within the gate. A
brute-force optimal matcher is included as a reference implementation
for small instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Mapping

import numpy as np

MATCH_GATE_M = 10.0
RANGE_BUCKET_M = 100.0
MAX_RANGE_M = 1000.0


def greedy_match(pred: np.ndarray, truth: np.ndarray,
                 gate: float = MATCH_GATE_M):
    """Ascending-distance greedy one-to-one matching within the gate.

    Returns (pi, ti, distance) triples. Deterministic: ties break on
    the lower prediction index, then truth index.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(pred) == 0 or len(truth) == 0:
        return []
    diff = pred[:, None, :] - truth[None, :, :]
    dist = np.sqrt(np.einsum("ptk,ptk->pt", diff, diff))
    ii, jj = np.nonzero(dist <= gate)
    cand = sorted(zip(dist[ii, jj].tolist(), ii.tolist(), jj.tolist()))
    used_p, used_t, out = set(), set(), []
    for d, i, j in cand:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        out.append((i, j, float(d)))
    out.sort()
    return out


def brute_force_match(pred: np.ndarray, truth: np.ndarray,
                      gate: float = MATCH_GATE_M):
    """Reference matcher: maximises pairs, then minimises summed distance."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    n_p, n_t = len(pred), len(truth)
    if n_p == 0 or n_t == 0:
        return []
    diff = pred[:, None, :] - truth[None, :, :]
    dist = np.sqrt(np.einsum("ptk,ptk->pt", diff, diff))
    best_score, best_pairs = (1, 0.0), []
    if n_p <= n_t:
        candidates = ([(i, j) for i, j in enumerate(perm)]
                      for perm in permutations(range(n_t), n_p))
    else:
        candidates = ([(i, j) for j, i in enumerate(perm)]
                      for perm in permutations(range(n_p), n_t))
    for pairs in candidates:
        ok = [(i, j) for i, j in pairs if dist[i, j] <= gate]
        score = (-len(ok), sum(dist[i, j] for i, j in ok))
        if score < best_score:
            best_score, best_pairs = score, ok
    return sorted((i, j, float(dist[i, j])) for i, j in best_pairs)


def _bucket_key(r: float) -> str:
    lo = int(min(r // RANGE_BUCKET_M, MAX_RANGE_M / RANGE_BUCKET_M - 1)
             * RANGE_BUCKET_M)
    return f"{lo}-{lo + int(RANGE_BUCKET_M)}"


@dataclass
class PointFilterTally:
    """Point-level filtering scores against per-point origin labels."""

    uav_total: int = 0
    uav_removed: int = 0
    noise_total: int = 0
    noise_removed: int = 0

    def update(self, labels: Iterable[str], kept_mask: np.ndarray) -> None:
        for lab, kept in zip(labels, kept_mask):
            if lab == "uav":
                self.uav_total += 1
                self.uav_removed += 0 if kept else 1
            else:
                self.noise_total += 1
                self.noise_removed += 0 if kept else 1

    def result(self) -> dict:
        f_u = (self.uav_removed / self.uav_total) if self.uav_total else None
        f_n = (self.noise_removed / self.noise_total) if self.noise_total else None
        return {"uav_points": self.uav_total, "uav_removed": self.uav_removed,
                "noise_points": self.noise_total,
                "noise_removed": self.noise_removed,
                "uav_filtered_fraction": f_u,
                "noise_filtered_fraction": f_n}


@dataclass
class ObjectStageTally:
    """Raw-vs-kept object counts against true UAV positions."""

    frames: int = 0
    raw_false: int = 0
    kept_false: int = 0
    gt_total: int = 0
    gt_hit_raw: int = 0
    gt_hit_kept: int = 0
    gate: float = MATCH_GATE_M

    def update(self, raw_centroids, kept_centroids, gt_positions) -> None:
        self.frames += 1
        raw = np.asarray(raw_centroids, dtype=float).reshape(-1, 3)
        kept = np.asarray(kept_centroids, dtype=float).reshape(-1, 3)
        gt = np.asarray(gt_positions, dtype=float).reshape(-1, 3)
        self.gt_total += len(gt)
        for arr, false_attr, hit_attr in (
                (raw, "raw_false", "gt_hit_raw"),
                (kept, "kept_false", "gt_hit_kept")):
            pairs = greedy_match(arr, gt, self.gate)
            matched_pred = {i for i, _, _ in pairs}
            setattr(self, false_attr,
                    getattr(self, false_attr) + len(arr) - len(matched_pred))
            setattr(self, hit_attr, getattr(self, hit_attr) + len(pairs))

    def result(self) -> dict:
        reduction = (1.0 - self.kept_false / self.raw_false
                     if self.raw_false else None)
        return {
            "frames": self.frames,
            "raw_false_objects": self.raw_false,
            "kept_false_objects": self.kept_false,
            "raw_false_per_frame": self.raw_false / max(self.frames, 1),
            "kept_false_per_frame": self.kept_false / max(self.frames, 1),
            "false_object_reduction": reduction,
            "uav_object_recall_raw": (self.gt_hit_raw / self.gt_total
                                      if self.gt_total else None),
            "uav_object_recall_kept": (self.gt_hit_kept / self.gt_total
                                       if self.gt_total else None),
        }


@dataclass
class TrackTally:
    """Frame-by-frame track scoring with range breakdown."""

    gate: float = MATCH_GATE_M
    frames: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    loc_sum: float = 0.0
    fp_frames: int = 0
    buckets: dict = field(default_factory=dict)

    def _bucket(self, key: str) -> dict:
        return self.buckets.setdefault(
            key, {"tp": 0, "fp": 0, "fn": 0, "loc_sum": 0.0})

    def update(self, pred_positions, gt_positions) -> None:
        self.frames += 1
        pred = np.asarray(pred_positions, dtype=float).reshape(-1, 3)
        gt = np.asarray(gt_positions, dtype=float).reshape(-1, 3)
        pairs = greedy_match(pred, gt, self.gate)
        matched_p = {i for i, _, _ in pairs}
        matched_t = {j for _, j, _ in pairs}
        self.tp += len(pairs)
        fp_here = len(pred) - len(matched_p)
        self.fp += fp_here
        self.fn += len(gt) - len(matched_t)
        if fp_here:
            self.fp_frames += 1
        for i, j, d in pairs:
            self.loc_sum += d
            b = self._bucket(_bucket_key(np.linalg.norm(gt[j])))
            b["tp"] += 1
            b["loc_sum"] += d
        for j in range(len(gt)):
            if j not in matched_t:
                self._bucket(_bucket_key(np.linalg.norm(gt[j])))["fn"] += 1
        for i in range(len(pred)):
            if i not in matched_p:
                self._bucket(_bucket_key(np.linalg.norm(pred[i])))["fp"] += 1

    def result(self) -> dict:
        precision = self.tp / (self.tp + self.fp) if (self.tp + self.fp) else None
        recall = self.tp / (self.tp + self.fn) if (self.tp + self.fn) else None
        f1 = None
        if precision is not None and recall is not None and precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        buckets = {}
        for key in sorted(self.buckets,
                          key=lambda s: int(s.split("-")[0])):
            b = self.buckets[key]
            buckets[key] = {
                "tp": b["tp"], "fp": b["fp"], "fn": b["fn"],
                "recall": (b["tp"] / (b["tp"] + b["fn"])
                           if b["tp"] + b["fn"] else None),
                "mean_loc_error_m": (b["loc_sum"] / b["tp"]
                                     if b["tp"] else None),
            }
        return {
            "frames": self.frames, "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": precision, "recall": recall, "f1": f1,
            "mean_loc_error_m": self.loc_sum / self.tp if self.tp else None,
            "false_per_frame": self.fp / max(self.frames, 1),
            "fp_frame_fraction": self.fp_frames / max(self.frames, 1),
            "range_buckets": buckets,
        }


def evaluate_track_stream(outputs_by_frame: Mapping[int, list],
                          truth_by_frame: Mapping[int, list],
                          gate: float = MATCH_GATE_M) -> dict:
    """Score emitted track positions against truth, frame by frame.

    outputs_by_frame maps frame index to position triples; truth frames
    missing from outputs count as all-miss frames.
    """
    tally = TrackTally(gate=gate)
    for t in sorted(truth_by_frame):
        tally.update(outputs_by_frame.get(t, []), truth_by_frame[t])
    return tally.result()
