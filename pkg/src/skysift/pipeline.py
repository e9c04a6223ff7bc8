"""End-to-end streaming pipeline and the stage-ablation harness.

Per frame: point filtering against the cube fingerprint model, point
clustering plus confidence discrimination, IMM-UKF tracking, and the
trajectory classifier's verify-or-drop bookkeeping. Stages can be
toggled independently for ablation runs; disabled stages pass data
through untouched.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import Frame, GroundTruthFrame
from .fingerprint import (NoiseFingerprintModel, UpdatePolicy, filter_frame,
                          update_model)
from .metrics import ObjectStageTally, PointFilterTally, TrackTally
from .objects import (ClusterConfig, ConfidenceConfig, ConsistencyConfig,
                      ObjectFilter)
from .tracking import (CONFIRMED, Tracker, TrackerConfig, VERIFIED)
from .trajformer import (TrajFormerWeights, VerificationPolicy,
                         classify_window, default_weights_path, load_weights)


@dataclass
class StageToggles:
    point_filter: bool = True
    spatial_confidence: bool = True
    velocity_confidence: bool = True
    classifier: bool = True

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: bool(v) for k, v in d.items()})


@dataclass
class ClassifierConfig:
    weights_path: str | None = None   # None -> packaged default
    verify_streak: int = 1
    drop_streak: int = 5

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(weights_path=d.get("weights_path"),
                   verify_streak=int(d.get("verify_streak", 1)),
                   drop_streak=int(d.get("drop_streak", 5)))


@dataclass
class UpdateConfig:
    enabled: bool = False
    interval_frames: int = 270_000
    window_frames: int = 700
    exclusion_radius_m: float = 10.0

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(enabled=bool(d.get("enabled", False)),
                   interval_frames=int(d.get("interval_frames", 270_000)),
                   window_frames=int(d.get("window_frames", 700)),
                   exclusion_radius_m=float(d.get("exclusion_radius_m", 10.0)))


def _dataclass_from_dict(cls, d):
    return cls(**{k: v for k, v in d.items()})


@dataclass
class PipelineConfig:
    toggles: StageToggles = field(default_factory=StageToggles)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)

    def to_dict(self):
        out = {"toggles": self.toggles.to_dict(),
               "classifier": self.classifier.to_dict(),
               "update": self.update.to_dict()}
        for name in ("cluster", "consistency", "confidence", "tracker"):
            cfg = getattr(self, name)
            out[name] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in cfg.__dict__.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {}
        if "toggles" in d:
            kw["toggles"] = StageToggles.from_dict(d["toggles"])
        if "classifier" in d:
            kw["classifier"] = ClassifierConfig.from_dict(d["classifier"])
        if "update" in d:
            kw["update"] = UpdateConfig.from_dict(d["update"])
        for name, sub in (("cluster", ClusterConfig),
                          ("consistency", ConsistencyConfig),
                          ("confidence", ConfidenceConfig),
                          ("tracker", TrackerConfig)):
            if name in d:
                args = {k: (tuple(tuple(r) if isinstance(r, list) else r
                                  for r in v) if isinstance(v, list) else v)
                        for k, v in d[name].items()}
                kw[name] = _dataclass_from_dict(sub, args)
        return cls(**kw)


@dataclass
class FrameOutput:
    frame: Frame
    kept_frame: Frame
    kept_mask: np.ndarray | None
    objects: list
    kept_objects: list
    records: list
    emitted: list


class Pipeline:
    """Stateful frame-by-frame processor."""

    def __init__(self, config: PipelineConfig,
                 model: NoiseFingerprintModel | None = None,
                 weights: TrajFormerWeights | None = None):
        self.config = config
        tog = config.toggles
        if tog.point_filter and model is None:
            raise ValueError("point filter enabled but no fingerprint model given")
        self.model = model
        if tog.classifier and weights is None:
            path = config.classifier.weights_path or default_weights_path()
            weights = load_weights(str(path))
        self.weights = weights
        self.policy = VerificationPolicy(config.classifier.verify_streak,
                                         config.classifier.drop_streak)
        self.objects = ObjectFilter(
            cluster_cfg=config.cluster, consistency_cfg=config.consistency,
            confidence_cfg=config.confidence, dt=config.tracker.dt,
            use_spatial=tog.spatial_confidence,
            use_velocity=tog.velocity_confidence)
        self.tracker = Tracker(config.tracker)
        self.timings = {"point_filter": 0.0, "objects": 0.0,
                        "tracking": 0.0, "classifier": 0.0}
        self._recent: list[Frame] = []
        self._track_pos: dict[int, np.ndarray] = {}
        self._frames_since_fit = 0

    def _classify(self, records):
        """Verdict bookkeeping; returns surviving records."""
        window = self.weights.hyper.window
        by_index = {t.track_id: t for t in self.tracker.tracks}
        survivors = []
        for rec in records:
            track = by_index[rec.track_id]
            if (rec.status in (CONFIRMED, VERIFIED) and rec.obj is not None
                    and len(track.history) >= window):
                p_true = classify_window(self.weights,
                                         np.stack(track.history))
                if p_true > 0.5:
                    track.consec_true += 1
                    track.consec_false = 0
                else:
                    track.consec_false += 1
                    track.consec_true = 0
                if track.consec_false >= self.policy.drop_streak:
                    self.tracker.drop(rec.track_id)
                    continue
                if (track.status == CONFIRMED
                        and track.consec_true >= self.policy.verify_streak):
                    track.status = VERIFIED
                    rec.status = VERIFIED
            survivors.append(rec)
        return survivors

    def process(self, frame: Frame) -> FrameOutput:
        tog = self.config.toggles

        t0 = time.perf_counter()
        if tog.point_filter:
            fr = filter_frame(self.model, frame)
            kept_frame, kept_mask = fr.kept, fr.kept_mask
        else:
            kept_frame, kept_mask = frame, None
        t1 = time.perf_counter()

        obj_result = self.objects.step(kept_frame)
        t2 = time.perf_counter()

        records = self.tracker.step(frame.index, obj_result.kept)
        t3 = time.perf_counter()

        if tog.classifier:
            records = self._classify(records)
        emitted = self.tracker.emitted(records, require_verified=tog.classifier)
        t4 = time.perf_counter()

        self.timings["point_filter"] += t1 - t0
        self.timings["objects"] += t2 - t1
        self.timings["tracking"] += t3 - t2
        self.timings["classifier"] += t4 - t3

        if self.config.update.enabled and tog.point_filter:
            self._recent.append(frame)
            if len(self._recent) > self.config.update.window_frames:
                self._recent.pop(0)
            conf = [r.position for r in records
                    if r.status in (CONFIRMED, VERIFIED)]
            self._track_pos[frame.index] = (np.stack(conf) if conf
                                            else np.zeros((0, 3)))
            self._frames_since_fit += 1
            policy = UpdatePolicy(self.config.update.interval_frames,
                                  self.config.update.window_frames,
                                  self.config.update.exclusion_radius_m)
            if policy.due(self._frames_since_fit):
                self.model = update_model(self.model, self._recent,
                                          self._track_pos, policy)
                self._frames_since_fit = 0
                self._track_pos.clear()

        return FrameOutput(frame=frame, kept_frame=kept_frame,
                           kept_mask=kept_mask, objects=obj_result.objects,
                           kept_objects=obj_result.kept, records=records,
                           emitted=emitted)


@dataclass
class RunResult:
    metrics: dict
    timings: dict
    outputs_by_frame: dict


def run_stream(frames: Iterable[tuple[Frame, GroundTruthFrame | None]],
               config: PipelineConfig,
               model: NoiseFingerprintModel | None = None,
               weights: TrajFormerWeights | None = None,
               out_dir: str | None = None) -> RunResult:
    """Run the pipeline over (frame, truth) pairs and score it.

    Truth may be None per frame; scoring covers only frames that carry
    truth. With out_dir set, track/object streams are written there.
    """
    pipe = Pipeline(config, model=model, weights=weights)
    point_tally = PointFilterTally()
    obj_tally = ObjectStageTally()
    track_tally = TrackTally()
    outputs_by_frame: dict[int, list] = {}

    files = {}
    if out_dir is not None:
        from pathlib import Path
        base = Path(out_dir)
        base.mkdir(parents=True, exist_ok=True)
        for name in ("tracks", "track_obs", "objects"):
            files[name] = open(base / f"{name}.jsonl", "w")

    timings = {"input": 0.0, "io": 0.0, "scoring": 0.0}
    t_start = time.perf_counter()
    n_frames = 0
    it = iter(frames)
    while True:
        t0 = time.perf_counter()
        try:
            frame, gt = next(it)
        except StopIteration:
            timings["input"] += time.perf_counter() - t0
            break
        timings["input"] += time.perf_counter() - t0

        out = pipe.process(frame)
        n_frames += 1

        t0 = time.perf_counter()
        if files:
            emitted_ids = {u.track_id for u in out.emitted}
            for r in out.records:
                files["tracks"].write(json.dumps(
                    {"t": r.frame, "id": r.track_id, "status": r.status,
                     "pos": r.position.tolist(), "vel": r.velocity.tolist(),
                     "mp": r.model_probs.tolist(),
                     "emitted": r.track_id in emitted_ids}) + "\n")
                if r.obj is not None:
                    files["track_obs"].write(json.dumps(
                        {"t": r.frame, "id": r.track_id, "status": r.status,
                         "obj": np.asarray(r.obj, dtype=float).tolist()})
                        + "\n")
            for s in out.objects:
                kept = any(s.key == k.key for k in out.kept_objects)
                files["objects"].write(json.dumps(
                    {"t": frame.index, "key": s.key,
                     "obj": s.obj_vector().tolist(), "n": s.n_points,
                     "cs": s.c_s, "cv": s.c_v, "kept": kept}) + "\n")
        timings["io"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        outputs_by_frame[frame.index] = [u.position() for u in out.emitted]
        if gt is not None:
            gt_pos = [u.position() for u in gt.uavs]
            if out.kept_mask is not None:
                point_tally.update(gt.labels, out.kept_mask)
            obj_tally.update([s.centroid for s in out.objects],
                             [s.centroid for s in out.kept_objects], gt_pos)
            track_tally.update(outputs_by_frame[frame.index], gt_pos)
        timings["scoring"] += time.perf_counter() - t0

    total = time.perf_counter() - t_start
    for f in files.values():
        f.close()

    timings.update(pipe.timings)
    timings["total"] = total
    timings["frames"] = n_frames
    timings["fps"] = n_frames / total if total > 0 else None

    metrics = {"frames_scored": track_tally.frames,
               "tracks": track_tally.result()}
    if point_tally.uav_total or point_tally.noise_total:
        metrics["points"] = point_tally.result()
    if obj_tally.frames:
        metrics["objects"] = obj_tally.result()
    return RunResult(metrics=metrics, timings=timings,
                     outputs_by_frame=outputs_by_frame)


ABLATION_STAGES: list[tuple[str, StageToggles]] = [
    ("tracker_only", StageToggles(False, False, False, False)),
    ("point_filter", StageToggles(True, False, False, False)),
    ("spatial_confidence", StageToggles(True, True, False, False)),
    ("velocity_confidence", StageToggles(True, True, True, False)),
    ("full", StageToggles(True, True, True, True)),
]


def run_ablation(frames: list, config: PipelineConfig,
                 model: NoiseFingerprintModel,
                 weights: TrajFormerWeights | None = None) -> dict:
    """Run the standard stage ladder over a materialised stream."""
    from dataclasses import replace
    stages = []
    for name, toggles in ABLATION_STAGES:
        cfg = replace(config, toggles=toggles)
        res = run_stream(frames, cfg, model=model,
                         weights=weights if toggles.classifier else None)
        stages.append({"name": name, "toggles": toggles.to_dict(),
                       "metrics": res.metrics,
                       "seconds": res.timings["total"]})
    f1s = [s["metrics"]["tracks"]["f1"] for s in stages]
    clean = [v if v is not None else -1.0 for v in f1s]
    return {"stages": stages, "f1_ladder": f1s,
            "strictly_increasing": all(a < b for a, b in
                                       zip(clean, clean[1:]))}
