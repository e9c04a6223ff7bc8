"""HTTP service wrapping the filtering and tracking pipeline.

Batch endpoints (simulate/fit/run/eval/ablate) operate on files local
to the service host and block until done. Streaming sessions accept
frames one request at a time and return the tracks emitted for each.
"""
from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..core import CubeGrid, Frame
from ..fingerprint import NoiseFingerprintModel, fit_model
from ..metrics import evaluate_track_stream
from ..pipeline import Pipeline, PipelineConfig, run_ablation, run_stream
from ..simulate import SceneSpec, build_scene
from ..streams import read_frames, read_jsonl, read_truth
from ..trajformer import default_weights_path, load_weights
from . import schemas

app = FastAPI(title="skysift", version=__version__)

_sessions: dict[str, dict] = {}
_sessions_lock = threading.Lock()


def _fail(status: int, msg: str):
    raise HTTPException(status_code=status, detail=msg)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        _fail(404, f"{what} not found: {path}")
    return p


@app.get("/health", response_model=schemas.HealthResponse)
def health():
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate(req: schemas.SimulateRequest):
    if (req.scene is None) == (req.scene_path is None):
        _fail(422, "give exactly one of scene, scene_path")
    if req.scene is not None:
        spec_dict = req.scene
    else:
        spec_dict = json.loads(_require_file(req.scene_path,
                                             "scene spec").read_text())
    try:
        scene = build_scene(SceneSpec.from_dict(spec_dict))
    except (ValueError, KeyError) as e:
        _fail(422, f"bad scene spec: {e}")

    stop = scene.n_frames if req.stop is None else min(req.stop, scene.n_frames)
    counts = {"uav": 0, "clutter": 0, "ghost": 0}

    truth_fp = open(req.truth_path, "w") if req.truth_path else None
    n = 0
    with open(req.frames_path, "w") as frames_fp:
        for frame, gt in scene.frames(req.start, stop):
            frames_fp.write(json.dumps(
                {"t": frame.index, "ts": frame.timestamp,
                 "pts": frame.points.tolist()}) + "\n")
            if truth_fp is not None:
                truth_fp.write(json.dumps(
                    {"t": gt.index, "ts": gt.timestamp,
                     "uavs": [[u.uav_id, u.x, u.y, u.z, u.vx, u.vy, u.vz]
                              for u in gt.uavs],
                     "labels": gt.labels}) + "\n")
            for lab in gt.labels:
                counts[lab] += 1
            n += 1
    if truth_fp is not None:
        truth_fp.close()
    return schemas.SimulateResponse(frames=n, points=counts,
                                    frames_path=req.frames_path,
                                    truth_path=req.truth_path)


@app.post("/fit", response_model=schemas.FitResponse)
def fit(req: schemas.FitRequest):
    if (req.grid is None) == (req.scene_path is None):
        _fail(422, "give exactly one of grid, scene_path")
    if req.grid is not None:
        grid = CubeGrid.from_dict(req.grid)
    else:
        spec = SceneSpec.load(str(_require_file(req.scene_path, "scene spec")))
        grid = spec.grid
    _require_file(req.frames_path, "frames stream")

    def window():
        used = 0
        for i, frame in enumerate(read_frames(req.frames_path)):
            if i < req.start:
                continue
            if req.count is not None and used >= req.count:
                break
            used += 1
            yield frame

    frames = list(window())
    if not frames:
        _fail(422, "fit window selects no frames")
    try:
        model = fit_model(frames, grid, percentile=req.percentile,
                          alpha=req.alpha, min_samples=req.min_samples)
    except ValueError as e:
        _fail(422, str(e))
    model.save(req.model_path)
    return schemas.FitResponse(model_path=req.model_path, tau_sim=model.tau_sim,
                               cubes=len(model.cubes),
                               modeled_cubes=model.n_modeled,
                               frames_used=len(frames))


def _load_run_inputs(req: schemas.RunRequest):
    config = PipelineConfig.from_dict(req.config or {})
    model = None
    if config.toggles.point_filter:
        if req.model_path is None:
            _fail(422, "point filter enabled but model_path missing")
        model = NoiseFingerprintModel.load(
            str(_require_file(req.model_path, "fingerprint model")))
    weights = None
    if config.toggles.classifier:
        path = config.classifier.weights_path or str(default_weights_path())
        weights = load_weights(str(_require_file(path, "classifier weights")))
    return config, model, weights


def _paired_frames(req: schemas.RunRequest):
    truth_by_t = {}
    if req.truth_path:
        for gt in read_truth(req.truth_path):
            truth_by_t[gt.index] = gt
    stop = None if req.count is None else req.start + req.count
    eval_from = req.eval_from if req.eval_from is not None else req.start
    for i, frame in enumerate(read_frames(req.frames_path)):
        if i < req.start:
            continue
        if stop is not None and i >= stop:
            break
        gt = truth_by_t.get(frame.index)
        yield frame, (gt if frame.index >= eval_from else None)


@app.post("/run", response_model=schemas.RunResponse)
def run(req: schemas.RunRequest):
    _require_file(req.frames_path, "frames stream")
    config, model, weights = _load_run_inputs(req)
    result = run_stream(_paired_frames(req), config, model=model,
                        weights=weights, out_dir=req.out_dir)
    if req.out_dir:
        base = Path(req.out_dir)
        (base / "metrics.json").write_text(
            json.dumps(result.metrics, sort_keys=True, indent=1) + "\n")
        (base / "timings.json").write_text(
            json.dumps(result.timings, sort_keys=True, indent=1) + "\n")
    return schemas.RunResponse(metrics=result.metrics, timings=result.timings)


@app.post("/eval", response_model=schemas.EvalResponse)
def eval_tracks(req: schemas.EvalRequest):
    _require_file(req.tracks_path, "tracks stream")
    _require_file(req.truth_path, "truth stream")
    outputs: dict[int, list] = {}
    for line in read_jsonl(req.tracks_path):
        if line.get("emitted"):
            outputs.setdefault(int(line["t"]), []).append(
                np.asarray(line["pos"], dtype=float))
    truth = {gt.index: [u.position() for u in gt.uavs]
             for gt in read_truth(req.truth_path)}
    metrics = evaluate_track_stream(outputs, truth, gate=req.gate_m)
    if req.report_path:
        Path(req.report_path).write_text(
            json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    return schemas.EvalResponse(metrics=metrics)


@app.post("/ablate", response_model=schemas.AblateResponse)
def ablate(req: schemas.AblateRequest):
    _require_file(req.frames_path, "frames stream")
    run_req = schemas.RunRequest(frames_path=req.frames_path,
                                 truth_path=req.truth_path,
                                 model_path=req.model_path,
                                 config=req.config,
                                 eval_from=req.eval_from)
    config, model, _ = _load_run_inputs(run_req)
    weights = None
    path = config.classifier.weights_path or str(default_weights_path())
    weights = load_weights(str(_require_file(path, "classifier weights")))
    frames = list(_paired_frames(run_req))
    report = run_ablation(frames, config, model, weights)
    if req.report_path:
        Path(req.report_path).write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n")
    return schemas.AblateResponse(report=report)


@app.post("/sessions", response_model=schemas.SessionCreateResponse)
def create_session(req: schemas.SessionCreateRequest):
    config = PipelineConfig.from_dict(req.config or {})
    model = None
    if config.toggles.point_filter:
        if req.model_path is None:
            _fail(422, "point filter enabled but model_path missing")
        model = NoiseFingerprintModel.load(
            str(_require_file(req.model_path, "fingerprint model")))
    pipe = Pipeline(config, model=model)
    sid = uuid.uuid4().hex
    with _sessions_lock:
        _sessions[sid] = {"pipe": pipe, "frames": 0,
                          "config": config.to_dict(),
                          "lock": threading.Lock()}
    return schemas.SessionCreateResponse(session_id=sid)


def _session(sid: str) -> dict:
    with _sessions_lock:
        sess = _sessions.get(sid)
    if sess is None:
        _fail(404, f"no such session: {sid}")
    return sess


@app.post("/sessions/{sid}/frames", response_model=schemas.SessionStepResponse)
def push_frame(sid: str, payload: schemas.FramePayload):
    sess = _session(sid)
    try:
        frame = Frame(index=payload.t, timestamp=payload.ts,
                      points=np.asarray(payload.pts, dtype=float))
    except ValueError as e:
        _fail(422, str(e))
    with sess["lock"]:
        out = sess["pipe"].process(frame)
        sess["frames"] += 1
        live = len(sess["pipe"].tracker.tracks)
    emitted = [schemas.TrackOut(id=u.track_id, pos=[u.x, u.y, u.z],
                                vel=[u.vx, u.vy, u.vz])
               for u in out.emitted]
    return schemas.SessionStepResponse(t=payload.t, emitted=emitted,
                                       live_tracks=live)


@app.get("/sessions/{sid}", response_model=schemas.SessionInfoResponse)
def session_info(sid: str):
    sess = _session(sid)
    return schemas.SessionInfoResponse(
        session_id=sid, frames_processed=sess["frames"],
        live_tracks=len(sess["pipe"].tracker.tracks), config=sess["config"])


@app.delete("/sessions/{sid}")
def delete_session(sid: str):
    with _sessions_lock:
        if sid not in _sessions:
            _fail(404, f"no such session: {sid}")
        del _sessions[sid]
    return {"deleted": sid}
