"""Request and response bodies for the pipeline service.

File-path fields refer to paths on the host running the service; the
service is a batch/streaming compute wrapper, not a file store.
"""
from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SimulateRequest(BaseModel):
    scene: Optional[dict] = Field(None, description="inline scene spec")
    scene_path: Optional[str] = Field(None, description="scene spec JSON file")
    frames_path: str
    truth_path: Optional[str] = None
    start: int = 0
    stop: Optional[int] = None


class SimulateResponse(BaseModel):
    frames: int
    points: dict
    frames_path: str
    truth_path: Optional[str] = None


class FitRequest(BaseModel):
    frames_path: str
    model_path: str
    grid: Optional[dict] = None
    scene_path: Optional[str] = Field(
        None, description="read the cube grid from this scene spec")
    start: int = 0
    count: Optional[int] = None
    percentile: float = 80.0
    alpha: float = 0.05
    min_samples: int = 50


class FitResponse(BaseModel):
    model_path: str
    tau_sim: float
    cubes: int
    modeled_cubes: int
    frames_used: int


class RunRequest(BaseModel):
    frames_path: str
    truth_path: Optional[str] = None
    model_path: Optional[str] = None
    config: Optional[dict] = None
    out_dir: Optional[str] = None
    start: int = 0
    count: Optional[int] = None
    eval_from: Optional[int] = Field(
        None, description="score truth only from this frame index on")


class RunResponse(BaseModel):
    metrics: dict
    timings: dict


class EvalRequest(BaseModel):
    tracks_path: str
    truth_path: str
    gate_m: float = 10.0
    report_path: Optional[str] = None


class EvalResponse(BaseModel):
    metrics: dict


class AblateRequest(BaseModel):
    frames_path: str
    truth_path: str
    model_path: str
    config: Optional[dict] = None
    eval_from: Optional[int] = None
    report_path: Optional[str] = None


class AblateResponse(BaseModel):
    report: dict


class SessionCreateRequest(BaseModel):
    config: Optional[dict] = None
    model_path: Optional[str] = None


class SessionCreateResponse(BaseModel):
    session_id: str


class FramePayload(BaseModel):
    t: int
    ts: float
    pts: list[list[float]]


class TrackOut(BaseModel):
    id: int
    pos: list[float]
    vel: list[float]


class SessionStepResponse(BaseModel):
    t: int
    emitted: list[TrackOut]
    live_tracks: int


class SessionInfoResponse(BaseModel):
    session_id: str
    frames_processed: int
    live_tracks: int
    config: dict


class ErrorResponse(BaseModel):
    detail: Any
