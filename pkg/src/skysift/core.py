"""Shared data types for the point-cloud filtering pipeline.

Frames are stored as (n, 9) float arrays for throughput; the dataclass
views exist for single-point call sites and for interop at the edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Default frame period in seconds.
FRAME_DT = 0.64

# Column layout of a point record.
COL_X = 0
COL_Y = 1
COL_Z = 2
COL_DOPPLER = 3
COL_SNR = 4
COL_SCR = 5
COL_NOISE = 6
COL_SPAN = 7
COL_REPEAT = 8
POINT_DIM = 9

# Columns forming the signal-quality fingerprint of a point.
SIGNAL_COLS = slice(COL_SNR, COL_REPEAT + 1)
SIGNAL_DIM = 5

SIGNAL_NAMES = ("snr", "scr", "noise", "span", "repeat")


@dataclass
class RawPoint:
    """One detection from a sensing frame.

    Attributes:
        x, y, z: position in station-local metres, z up.
        doppler: radial velocity in m/s, positive receding.
        snr: signal-to-noise ratio, dB.
        scr: signal-to-clutter ratio, dB.
        noise: noise floor estimate, dBm.
        span: spread of the detection across resolution cells, dB.
        repeat: repeat-detection intensity, dB.
    """

    x: float
    y: float
    z: float
    doppler: float
    snr: float
    scr: float
    noise: float
    span: float
    repeat: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.z, self.doppler, self.snr, self.scr,
             self.noise, self.span, self.repeat], dtype=float)

    @classmethod
    def from_array(cls, row) -> "RawPoint":
        return cls(*(float(v) for v in row))

    def signal_vector(self) -> np.ndarray:
        return np.array([self.snr, self.scr, self.noise, self.span, self.repeat],
                        dtype=float)


@dataclass
class Frame:
    """A single sensing frame: point records plus timing."""

    index: int
    timestamp: float
    points: np.ndarray  # (n, 9) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, POINT_DIM)
        if pts.ndim != 2 or pts.shape[1] != POINT_DIM:
            raise ValueError(f"frame points must be (n, {POINT_DIM}), got {pts.shape}")
        self.points = pts

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def positions(self) -> np.ndarray:
        return self.points[:, COL_X:COL_Z + 1]

    def signals(self) -> np.ndarray:
        return self.points[:, SIGNAL_COLS]


@dataclass
class TrackedUav:
    """Confirmed track state emitted by the pipeline."""

    track_id: int
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz], dtype=float)


@dataclass
class CubeGrid:
    """Axis-aligned cube partition of the surveillance volume.

    A coordinate exactly on an interior cube boundary belongs to the
    higher-index cube, which is what floor division gives directly.
    """

    edge_m: float = 40.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extent: tuple[float, float, float] = (1000.0, 1000.0, 400.0)

    def __post_init__(self):
        if self.edge_m <= 0:
            raise ValueError("cube edge must be positive")
        self.origin = tuple(float(v) for v in self.origin)
        self.extent = tuple(float(v) for v in self.extent)
        if any(e <= 0 for e in self.extent):
            raise ValueError("grid extent must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(np.ceil(e / self.edge_m)) for e in self.extent)

    @property
    def n_cubes(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    def cube_index(self, x: float, y: float, z: float):
        """Map a position to its cube index triple, or None if outside."""
        ids, ok = self.cube_indices(np.array([[x, y, z]], dtype=float))
        if not ok[0]:
            return None
        return tuple(int(v) for v in ids[0])

    def cube_indices(self, xyz: np.ndarray):
        """Vectorised cube lookup.

        Returns (indices, valid): an (n, 3) int array and a boolean mask;
        indices of out-of-volume points are not meaningful.
        """
        xyz = np.asarray(xyz, dtype=float)
        rel = xyz - np.asarray(self.origin)
        ids = np.floor(rel / self.edge_m).astype(np.int64)
        shape = np.asarray(self.shape)
        inside = np.all((rel >= 0.0) & (rel < np.asarray(self.extent)), axis=1)
        inside &= np.all(ids < shape, axis=1)
        return ids, inside

    def cube_center(self, idx) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(idx, dtype=float) + 0.5) * self.edge_m

    def to_dict(self) -> dict:
        return {"edge_m": self.edge_m, "origin": list(self.origin),
                "extent": list(self.extent)}

    @classmethod
    def from_dict(cls, d: dict) -> "CubeGrid":
        return cls(edge_m=float(d["edge_m"]), origin=tuple(d["origin"]),
                   extent=tuple(d["extent"]))


@dataclass
class GroundTruthUav:
    """True UAV state attached to a frame for evaluation."""

    uav_id: int
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass
class GroundTruthFrame:
    """Per-frame truth: UAV states plus an origin label per point."""

    index: int
    timestamp: float
    uavs: list[GroundTruthUav] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)  # "uav" | "clutter" | "ghost"
