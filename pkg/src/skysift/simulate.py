"""Synthetic scene generation for pipeline development and evaluation.

A scene is frozen at build time (reflector population, ghost routes,
UAV paths); every frame is then a pure function of (spec, frame
index), so streams are reproducible point for point.

Clutter comes in four flavours. Static cubes hold frozen reflectors
that reappear with small jitter; volatile cubes redraw count and
positions every frame like speckle (optionally contaminated with a
bimodal signal offset so the cube fails a normality screen);
structure zones are multi-cube blocks of always-on glints wandering
horizontally under one shared signal Gaussian; flares are scheduled
bursts of extra volatile returns in a host cube. Ghosts are mid-air
drifting returns whose Doppler is, by default, decoupled from their
apparent motion.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (CubeGrid, FRAME_DT, Frame, GroundTruthFrame, GroundTruthUav,
                   SIGNAL_DIM)
from .paths import PathSampler

MAX_CLUTTER_DOPPLER = 3.2


def _as_floats(x, n=None):
    a = np.asarray(x, dtype=float)
    if n is not None and a.shape != (n,):
        raise ValueError(f"expected {n} values, got shape {a.shape}")
    return a


@dataclass
class SignalModel:
    """Gaussian over the five signal metrics."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = _as_floats(self.mean, SIGNAL_DIM)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (SIGNAL_DIM, SIGNAL_DIM):
            raise ValueError("signal covariance must be 5x5")

    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("signal covariance not positive definite") from None

    def to_dict(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=d["mean"], cov=d["cov"])


@dataclass
class ClutterCubeSpec:
    """Clutter population of one cube.

    Static cubes hold a frozen reflector set (count pins it exactly,
    otherwise Poisson with the given rate) that reappears each frame
    with jitter. Volatile cubes redraw point count and positions every
    frame, like speckle. mixture_weight > 0 contaminates that fraction
    of signal draws with mixture_offset, making the cube non-Gaussian.
    """

    cube: tuple[int, int, int]
    signal: SignalModel
    rate: float = 1.0
    count: int | None = None
    volatile: bool = False
    doppler_spread: float = 2.0
    mixture_weight: float = 0.0
    mixture_offset: np.ndarray | None = None
    detect_prob: float = 0.9
    jitter_m: float = 0.5

    def to_dict(self):
        return {"cube": list(self.cube), "signal": self.signal.to_dict(),
                "rate": self.rate, "count": self.count,
                "volatile": self.volatile,
                "doppler_spread": self.doppler_spread,
                "mixture_weight": self.mixture_weight,
                "mixture_offset": (None if self.mixture_offset is None
                                   else np.asarray(self.mixture_offset).tolist()),
                "detect_prob": self.detect_prob, "jitter_m": self.jitter_m}

    @classmethod
    def from_dict(cls, d):
        return cls(cube=tuple(int(v) for v in d["cube"]),
                   signal=SignalModel.from_dict(d["signal"]),
                   rate=float(d.get("rate", 1.0)),
                   count=d.get("count"),
                   volatile=bool(d.get("volatile", False)),
                   doppler_spread=float(d.get("doppler_spread", 2.0)),
                   mixture_weight=float(d.get("mixture_weight", 0.0)),
                   mixture_offset=d.get("mixture_offset"),
                   detect_prob=float(d.get("detect_prob", 0.9)),
                   jitter_m=float(d.get("jitter_m", 0.5)))


@dataclass
class ClutterFieldSpec:
    """Compact recipe expanded into per-cube clutter specs at build time.

    Non-Gaussian cubes are always volatile. Gaussian cubes are static
    reflector sets with probability static_fraction, volatile otherwise;
    volatile Gaussian cubes get their rate scaled by volatile_rate_scale.
    """

    n_cubes: int
    z_band: tuple[int, int] = (0, 5)
    rate_range: tuple[float, float] = (0.7, 1.7)
    nongauss_fraction: float = 0.25
    nongauss_rate_scale: float = 1.0
    static_fraction: float = 1.0
    volatile_rate_scale: float = 1.0
    mixture_weight_range: tuple[float, float] = (0.25, 0.45)
    mixture_offset_sigma: float = 2.8
    signal_center: tuple = (6.0, 3.0, -95.0, -65.0, -72.0)
    center_spread: tuple = (3.0, 2.0, 3.0, 3.0, 3.0)
    sigma_range: tuple[float, float] = (0.6, 1.5)
    corr_strength: float = 0.5
    doppler_spread_range: tuple[float, float] = (0.8, 3.2)
    detect_prob: float = 0.9
    jitter_m: float = 0.5

    def to_dict(self):
        d = self.__dict__.copy()
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class DropoutSpec:
    """Deterministic miss bursts, phased by frames since UAV entry."""

    period: int
    bursts: list[tuple[int, int]] = field(default_factory=list)  # (offset, length)

    def dropped(self, frames_since_start: int) -> bool:
        if self.period <= 0:
            return False
        rel = frames_since_start % self.period
        return any(off <= rel < off + ln for off, ln in self.bursts)

    def to_dict(self):
        return {"period": self.period,
                "bursts": [list(b) for b in self.bursts]}

    @classmethod
    def from_dict(cls, d):
        return cls(period=int(d["period"]),
                   bursts=[tuple(int(x) for x in b) for b in d["bursts"]])


@dataclass
class UavSpec:
    uav_id: int
    shape: str
    size_m: float
    origin_xy: tuple[float, float]
    altitude_m: float
    speed_mps: float
    signal: SignalModel
    heading_deg: float = 0.0
    start_frame: int = 0
    end_frame: int | None = None
    phase_s: float = 0.0
    detect_prob: float = 0.95
    dropout: DropoutSpec | None = None
    meas_sigma_m: float = 1.0
    doppler_sigma: float = 0.25

    def to_dict(self):
        return {"uav_id": self.uav_id, "shape": self.shape,
                "size_m": self.size_m, "origin_xy": list(self.origin_xy),
                "altitude_m": self.altitude_m, "speed_mps": self.speed_mps,
                "signal": self.signal.to_dict(), "heading_deg": self.heading_deg,
                "start_frame": self.start_frame, "end_frame": self.end_frame,
                "phase_s": self.phase_s, "detect_prob": self.detect_prob,
                "dropout": None if self.dropout is None else self.dropout.to_dict(),
                "meas_sigma_m": self.meas_sigma_m,
                "doppler_sigma": self.doppler_sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(uav_id=int(d["uav_id"]), shape=d["shape"],
                   size_m=float(d["size_m"]),
                   origin_xy=tuple(float(v) for v in d["origin_xy"]),
                   altitude_m=float(d["altitude_m"]),
                   speed_mps=float(d["speed_mps"]),
                   signal=SignalModel.from_dict(d["signal"]),
                   heading_deg=float(d.get("heading_deg", 0.0)),
                   start_frame=int(d.get("start_frame", 0)),
                   end_frame=d.get("end_frame"),
                   phase_s=float(d.get("phase_s", 0.0)),
                   detect_prob=float(d.get("detect_prob", 0.95)),
                   dropout=(None if d.get("dropout") is None
                            else DropoutSpec.from_dict(d["dropout"])),
                   meas_sigma_m=float(d.get("meas_sigma_m", 1.0)),
                   doppler_sigma=float(d.get("doppler_sigma", 0.25)))


@dataclass
class GhostPopulationSpec:
    """Mid-air drifting false returns without a physical target."""

    count: int
    signal: SignalModel
    lifetime_range: tuple[int, int] = (60, 200)
    spawn_range: tuple[int, int] | None = None
    box_xy: tuple[float, float, float, float] = (-400.0, 400.0, 100.0, 900.0)
    altitude_range: tuple[float, float] = (100.0, 300.0)
    jitter_m: float = 2.0
    drift_speed_range: tuple[float, float] = (1.0, 5.0)
    doppler_spread: float = 3.2
    doppler_coupled: bool = False
    detect_prob: float = 0.97

    def to_dict(self):
        return {"count": self.count, "signal": self.signal.to_dict(),
                "lifetime_range": list(self.lifetime_range),
                "spawn_range": (None if self.spawn_range is None
                                else list(self.spawn_range)),
                "box_xy": list(self.box_xy),
                "altitude_range": list(self.altitude_range),
                "jitter_m": self.jitter_m,
                "drift_speed_range": list(self.drift_speed_range),
                "doppler_spread": self.doppler_spread,
                "doppler_coupled": self.doppler_coupled,
                "detect_prob": self.detect_prob}

    @classmethod
    def from_dict(cls, d):
        return cls(count=int(d["count"]),
                   signal=SignalModel.from_dict(d["signal"]),
                   lifetime_range=tuple(int(v) for v in d["lifetime_range"]),
                   spawn_range=(None if d.get("spawn_range") is None
                                else tuple(int(v) for v in d["spawn_range"])),
                   box_xy=tuple(float(v) for v in d["box_xy"]),
                   altitude_range=tuple(float(v) for v in d["altitude_range"]),
                   jitter_m=float(d.get("jitter_m", 2.0)),
                   drift_speed_range=tuple(float(v)
                                           for v in d["drift_speed_range"]),
                   doppler_spread=float(d.get("doppler_spread", 3.2)),
                   doppler_coupled=bool(d.get("doppler_coupled", False)),
                   detect_prob=float(d.get("detect_prob", 0.97)))


@dataclass
class StructureZoneSpec:
    """A block of cubes acting like one extended ground structure.

    The zone spans span cubes starting at origin_cube and keeps
    n_reflectors glint centers that are always present, wandering with
    a large horizontal jitter (glint walks along the structure) and a
    small vertical one. All zone cubes share one signal Gaussian, so
    every cube the glints visit still fits a clean per-cube model.
    """

    origin_cube: tuple[int, int, int]
    span: tuple[int, int, int]
    n_reflectors: int
    signal: SignalModel
    jitter_xy_m: float = 9.0
    jitter_z_m: float = 2.0
    doppler_spread: float = 2.5
    detect_prob: float = 1.0

    def to_dict(self):
        return {"origin_cube": list(self.origin_cube),
                "span": list(self.span),
                "n_reflectors": self.n_reflectors,
                "signal": self.signal.to_dict(),
                "jitter_xy_m": self.jitter_xy_m,
                "jitter_z_m": self.jitter_z_m,
                "doppler_spread": self.doppler_spread,
                "detect_prob": self.detect_prob}

    @classmethod
    def from_dict(cls, d):
        return cls(origin_cube=tuple(int(v) for v in d["origin_cube"]),
                   span=tuple(int(v) for v in d["span"]),
                   n_reflectors=int(d["n_reflectors"]),
                   signal=SignalModel.from_dict(d["signal"]),
                   jitter_xy_m=float(d.get("jitter_xy_m", 9.0)),
                   jitter_z_m=float(d.get("jitter_z_m", 2.0)),
                   doppler_spread=float(d.get("doppler_spread", 2.5)),
                   detect_prob=float(d.get("detect_prob", 1.0)))


@dataclass
class FlareSpec:
    """Periodic burst of extra volatile returns inside one clutter cube.

    Active whenever (t - offset) mod period < length and t >= offset;
    while active the host cube's per-frame Poisson rate gains rate.
    """

    cube: tuple[int, int, int]
    period: int
    length: int
    rate: float
    offset: int = 0

    def active(self, t: int) -> bool:
        if t < self.offset or self.period <= 0:
            return False
        return (t - self.offset) % self.period < self.length

    def to_dict(self):
        return {"cube": list(self.cube), "period": self.period,
                "length": self.length, "rate": self.rate,
                "offset": self.offset}

    @classmethod
    def from_dict(cls, d):
        return cls(cube=tuple(int(v) for v in d["cube"]),
                   period=int(d["period"]), length=int(d["length"]),
                   rate=float(d["rate"]), offset=int(d.get("offset", 0)))


@dataclass
class DriftSpec:
    """Permanent shift of one cube's signal mean from a given frame on."""

    frame: int
    cube: tuple[int, int, int]
    mean_offset: np.ndarray

    def to_dict(self):
        return {"frame": self.frame, "cube": list(self.cube),
                "mean_offset": np.asarray(self.mean_offset).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(frame=int(d["frame"]),
                   cube=tuple(int(v) for v in d["cube"]),
                   mean_offset=_as_floats(d["mean_offset"], SIGNAL_DIM))


@dataclass
class SceneSpec:
    """Complete scene description; JSON round-trippable."""

    seed: int
    n_frames: int
    grid: CubeGrid
    dt: float = FRAME_DT
    clutter_field: ClutterFieldSpec | None = None
    clutter_cubes: list[ClutterCubeSpec] = field(default_factory=list)
    zones: list[StructureZoneSpec] = field(default_factory=list)
    flares: list[FlareSpec] = field(default_factory=list)
    uavs: list[UavSpec] = field(default_factory=list)
    ghosts: list[GhostPopulationSpec] = field(default_factory=list)
    drifts: list[DriftSpec] = field(default_factory=list)

    def to_dict(self):
        return {"seed": self.seed, "n_frames": self.n_frames, "dt": self.dt,
                "grid": self.grid.to_dict(),
                "clutter_field": (None if self.clutter_field is None
                                  else self.clutter_field.to_dict()),
                "clutter_cubes": [c.to_dict() for c in self.clutter_cubes],
                "zones": [z.to_dict() for z in self.zones],
                "flares": [f.to_dict() for f in self.flares],
                "uavs": [u.to_dict() for u in self.uavs],
                "ghosts": [g.to_dict() for g in self.ghosts],
                "drifts": [d.to_dict() for d in self.drifts]}

    @classmethod
    def from_dict(cls, d):
        return cls(seed=int(d["seed"]), n_frames=int(d["n_frames"]),
                   dt=float(d.get("dt", FRAME_DT)),
                   grid=CubeGrid.from_dict(d["grid"]),
                   clutter_field=(None if d.get("clutter_field") is None
                                  else ClutterFieldSpec.from_dict(d["clutter_field"])),
                   clutter_cubes=[ClutterCubeSpec.from_dict(c)
                                  for c in d.get("clutter_cubes", [])],
                   zones=[StructureZoneSpec.from_dict(z)
                          for z in d.get("zones", [])],
                   flares=[FlareSpec.from_dict(f) for f in d.get("flares", [])],
                   uavs=[UavSpec.from_dict(u) for u in d.get("uavs", [])],
                   ghosts=[GhostPopulationSpec.from_dict(g)
                           for g in d.get("ghosts", [])],
                   drifts=[DriftSpec.from_dict(x) for x in d.get("drifts", [])])

    def save(self, path: str):
        with open(path, "w") as fp:
            json.dump(self.to_dict(), fp, indent=1)
            fp.write("\n")

    @classmethod
    def load(cls, path: str):
        with open(path) as fp:
            return cls.from_dict(json.load(fp))


def _zone_cubes(spec: SceneSpec) -> set:
    taken = set()
    for z in spec.zones:
        o, sp = z.origin_cube, z.span
        for i in range(o[0], o[0] + sp[0]):
            for j in range(o[1], o[1] + sp[1]):
                for k in range(o[2], o[2] + sp[2]):
                    taken.add((i, j, k))
    return taken


def _expand_field(spec: SceneSpec) -> list[ClutterCubeSpec]:
    f = spec.clutter_field
    if f is None:
        return []
    rng = np.random.default_rng([spec.seed, 11])
    nx, ny, nz = spec.grid.shape
    zlo, zhi = f.z_band
    zhi = min(zhi, nz)
    taken = _zone_cubes(spec) | {c.cube for c in spec.clutter_cubes}
    candidates = [(i, j, k) for k in range(zlo, zhi)
                  for j in range(ny) for i in range(nx)
                  if (i, j, k) not in taken]
    if f.n_cubes > len(candidates):
        raise ValueError("clutter field wants more cubes than the band holds")
    pick = rng.choice(len(candidates), size=f.n_cubes, replace=False)
    center = np.asarray(f.signal_center, dtype=float)
    spread = np.asarray(f.center_spread, dtype=float)

    cubes = []
    for ci in sorted(int(v) for v in pick):
        cube = candidates[ci]
        nongauss = rng.uniform() < f.nongauss_fraction
        static = rng.uniform() < f.static_fraction
        rate = rng.uniform(*f.rate_range)
        mean = center + rng.normal(size=SIGNAL_DIM) * spread
        sig = rng.uniform(*f.sigma_range, size=SIGNAL_DIM)
        a = rng.normal(size=(SIGNAL_DIM, SIGNAL_DIM))
        b = a @ a.T
        d = np.sqrt(np.diag(b))
        corr = b / np.outer(d, d)
        corr = (1.0 - f.corr_strength) * np.eye(SIGNAL_DIM) + f.corr_strength * corr
        cov = corr * np.outer(sig, sig)
        weight = rng.uniform(*f.mixture_weight_range) if nongauss else 0.0
        offset = rng.choice([-1.0, 1.0], size=SIGNAL_DIM) * f.mixture_offset_sigma * sig
        # Non-Gaussian cubes model speckle-like multipath zones: points are
        # redrawn every frame instead of echoing a frozen reflector set.
        if nongauss:
            rate *= f.nongauss_rate_scale
        elif not static:
            rate *= f.volatile_rate_scale
        cubes.append(ClutterCubeSpec(
            cube=cube, signal=SignalModel(mean, cov), rate=float(rate),
            volatile=nongauss or not static,
            doppler_spread=float(rng.uniform(*f.doppler_spread_range)),
            mixture_weight=float(weight),
            mixture_offset=offset if nongauss else None,
            detect_prob=f.detect_prob, jitter_m=f.jitter_m))
    return cubes


class Scene:
    """A built scene; frames are a pure function of the frame index."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.grid = spec.grid

        cube_specs = _expand_field(spec) + list(spec.clutter_cubes)
        for cs in cube_specs:
            if not (0.0 <= cs.detect_prob <= 1.0):
                raise ValueError("clutter detect_prob outside [0, 1]")
            if cs.doppler_spread > MAX_CLUTTER_DOPPLER + 1e-12:
                raise ValueError(
                    f"clutter doppler spread {cs.doppler_spread} exceeds "
                    f"{MAX_CLUTTER_DOPPLER} m/s")
            if cs.rate < 0:
                raise ValueError("clutter rate must be non-negative")
        self.cube_specs = cube_specs

        # per-cube tables
        k = len(cube_specs)
        self.cube_mean = np.zeros((k, SIGNAL_DIM))
        self.cube_chol = np.zeros((k, SIGNAL_DIM, SIGNAL_DIM))
        self.cube_mix_w = np.zeros(k)
        self.cube_mix_off = np.zeros((k, SIGNAL_DIM))
        self.cube_dspread = np.zeros(k)
        self.cube_detect = np.zeros(k)
        self.cube_jitter = np.zeros(k)
        cube_slot = {}
        for s, cs in enumerate(cube_specs):
            self.cube_mean[s] = cs.signal.mean
            self.cube_chol[s] = cs.signal.chol()
            self.cube_mix_w[s] = cs.mixture_weight
            if cs.mixture_offset is not None:
                self.cube_mix_off[s] = _as_floats(cs.mixture_offset, SIGNAL_DIM)
            self.cube_dspread[s] = cs.doppler_spread
            self.cube_detect[s] = cs.detect_prob
            self.cube_jitter[s] = cs.jitter_m
            cube_slot[cs.cube] = s

        # freeze the static reflector population; volatile cubes get a
        # per-frame Poisson redraw instead
        rng = np.random.default_rng([spec.seed, 13])
        origin = np.asarray(self.grid.origin)
        edge = self.grid.edge_m
        pos_parts, slot_parts = [], []
        vol_slots, vol_rates, vol_lo = [], [], []
        for s, cs in enumerate(cube_specs):
            lo = origin + np.asarray(cs.cube, dtype=float) * edge
            if cs.volatile:
                vol_slots.append(s)
                vol_rates.append(cs.rate if cs.count is None else cs.count)
                vol_lo.append(lo)
                continue
            n = cs.count if cs.count is not None else int(rng.poisson(cs.rate))
            if n <= 0:
                continue
            # keep reflectors clear of the faces so jitter cannot bleed a
            # reflector into the neighbouring cube's statistics
            pad = min(3.0 * cs.jitter_m, 0.25 * edge)
            pos_parts.append(lo + pad + rng.uniform(0.0, edge - 2.0 * pad,
                                                    size=(n, 3)))
            slot_parts.append(np.full(n, s, dtype=np.int64))
        if pos_parts:
            self.refl_pos = np.vstack(pos_parts)
            self.refl_slot = np.concatenate(slot_parts)
        else:
            self.refl_pos = np.zeros((0, 3))
            self.refl_slot = np.zeros(0, dtype=np.int64)
        self.vol_slot = np.asarray(vol_slots, dtype=np.int64)
        self.vol_rate = np.asarray(vol_rates, dtype=float)
        self.vol_lo = (np.asarray(vol_lo) if vol_lo
                       else np.zeros((0, 3)))

        self.drift_events = []
        for ev in spec.drifts:
            if ev.cube not in cube_slot:
                raise ValueError(f"drift targets unknown clutter cube {ev.cube}")
            self.drift_events.append((ev.frame, cube_slot[ev.cube],
                                      np.asarray(ev.mean_offset, dtype=float)))

        # structure zones: frozen glint centers padded away from the zone
        # boundary so the per-frame wander stays inside it
        self.zone_tabs = []
        shape = self.grid.shape
        for zi, z in enumerate(spec.zones):
            o, sp = z.origin_cube, z.span
            if min(sp) < 1:
                raise ValueError("zone span must be at least one cube")
            if (min(o) < 0 or o[0] + sp[0] > shape[0]
                    or o[1] + sp[1] > shape[1] or o[2] + sp[2] > shape[2]):
                raise ValueError(f"zone at {o} span {sp} leaves the grid")
            if z.doppler_spread > MAX_CLUTTER_DOPPLER + 1e-12:
                raise ValueError("zone doppler spread exceeds "
                                 f"{MAX_CLUTTER_DOPPLER} m/s")
            if not (0.0 <= z.detect_prob <= 1.0):
                raise ValueError("zone detect_prob outside [0, 1]")
            zrng = np.random.default_rng([spec.seed, 19, zi])
            lo = origin + np.asarray(o, dtype=float) * edge
            ext = np.asarray(sp, dtype=float) * edge
            pad = np.minimum(3.0 * np.array([z.jitter_xy_m, z.jitter_xy_m,
                                             z.jitter_z_m]), 0.45 * ext)
            pts = lo + pad + zrng.uniform(size=(z.n_reflectors, 3)) * (ext - 2 * pad)
            self.zone_tabs.append({
                "spec": z, "pos": pts, "chol": z.signal.chol(),
                "jit": np.array([z.jitter_xy_m, z.jitter_xy_m, z.jitter_z_m]),
            })

        # flare schedules ride on existing clutter cube slots
        self.flare_tabs = []
        for fl in spec.flares:
            if fl.cube not in cube_slot:
                raise ValueError(f"flare targets unknown clutter cube {fl.cube}")
            if fl.rate < 0:
                raise ValueError("flare rate must be non-negative")
            self.flare_tabs.append(
                (fl, cube_slot[fl.cube],
                 origin + np.asarray(fl.cube, dtype=float) * edge))

        # ghost routes
        self.ghost_pops = []
        for gi, g in enumerate(spec.ghosts):
            if not (0.0 <= g.detect_prob <= 1.0):
                raise ValueError("ghost detect_prob outside [0, 1]")
            grng = np.random.default_rng([spec.seed, 17, gi])
            lo, hi = g.spawn_range if g.spawn_range else (0, spec.n_frames)
            births = grng.integers(lo, max(hi, lo + 1), size=g.count)
            lives = grng.integers(g.lifetime_range[0], g.lifetime_range[1] + 1,
                                  size=g.count)
            x0 = grng.uniform(g.box_xy[0], g.box_xy[1], size=g.count)
            y0 = grng.uniform(g.box_xy[2], g.box_xy[3], size=g.count)
            z0 = grng.uniform(*g.altitude_range, size=g.count)
            ang = grng.uniform(0.0, 2.0 * np.pi, size=g.count)
            speed = grng.uniform(*g.drift_speed_range, size=g.count)
            vel = np.column_stack([speed * np.cos(ang), speed * np.sin(ang),
                                   np.zeros(g.count)])
            self.ghost_pops.append({
                "spec": g, "birth": births, "death": births + lives,
                "p0": np.column_stack([x0, y0, z0]), "vel": vel,
                "chol": g.signal.chol(),
            })

        # UAV route samplers
        self.uav_samplers = []
        for u in spec.uavs:
            if not (0.0 <= u.detect_prob <= 1.0):
                raise ValueError("uav detect_prob outside [0, 1]")
            self.uav_samplers.append(
                (u, PathSampler(u.shape, u.size_m, u.origin_xy, u.altitude_m,
                                u.speed_mps, u.heading_deg), u.signal.chol()))

    @property
    def n_frames(self) -> int:
        return self.spec.n_frames

    def _cube_means_at(self, t: int) -> np.ndarray:
        if not self.drift_events:
            return self.cube_mean
        means = self.cube_mean.copy()
        for at, slot, off in self.drift_events:
            if t >= at:
                means[slot] += off
        return means

    def frame(self, t: int) -> tuple[Frame, GroundTruthFrame]:
        spec = self.spec
        rng = np.random.default_rng([spec.seed, 1_000_003, t])
        parts, labels = [], []

        # static clutter
        means = self._cube_means_at(t)
        r = len(self.refl_pos)
        present = rng.uniform(size=r) < self.cube_detect[self.refl_slot]
        jitter = rng.normal(size=(r, 3))
        sig_n = rng.normal(size=(r, SIGNAL_DIM))
        mix_u = rng.uniform(size=r)
        dopp = rng.uniform(-1.0, 1.0, size=r)
        if present.any():
            slot = self.refl_slot[present]
            pos = (self.refl_pos[present]
                   + jitter[present] * self.cube_jitter[slot][:, None])
            sig = means[slot] + np.einsum("nij,nj->ni", self.cube_chol[slot],
                                          sig_n[present])
            mix_hit = mix_u[present] < self.cube_mix_w[slot]
            sig[mix_hit] += self.cube_mix_off[slot[mix_hit]]
            vd = dopp[present] * self.cube_dspread[slot]
            parts.append(np.column_stack([pos, vd, sig]))
            labels.extend(["clutter"] * int(present.sum()))

        # structure zone glints
        for tab in self.zone_tabs:
            z = tab["spec"]
            n = len(tab["pos"])
            pres = rng.uniform(size=n) < z.detect_prob
            jit = rng.normal(size=(n, 3)) * tab["jit"]
            sn = rng.normal(size=(n, SIGNAL_DIM))
            du = rng.uniform(-1.0, 1.0, size=n)
            if not pres.any():
                continue
            pos = tab["pos"][pres] + jit[pres]
            sig = z.signal.mean + np.einsum("ij,nj->ni", tab["chol"], sn[pres])
            vd = du[pres] * z.doppler_spread
            parts.append(np.column_stack([pos, vd, sig]))
            labels.extend(["clutter"] * int(pres.sum()))

        # volatile clutter, redrawn from scratch every frame
        if len(self.vol_slot):
            counts = rng.poisson(self.vol_rate)
            nv = int(counts.sum())
            if nv > 0:
                slot = np.repeat(self.vol_slot, counts)
                lo = np.repeat(self.vol_lo, counts, axis=0)
                pos = lo + rng.uniform(0.0, self.grid.edge_m, size=(nv, 3))
                sig = means[slot] + np.einsum(
                    "nij,nj->ni", self.cube_chol[slot],
                    rng.normal(size=(nv, SIGNAL_DIM)))
                mix_hit = rng.uniform(size=nv) < self.cube_mix_w[slot]
                sig[mix_hit] += self.cube_mix_off[slot[mix_hit]]
                vd = rng.uniform(-1.0, 1.0, size=nv) * self.cube_dspread[slot]
                parts.append(np.column_stack([pos, vd, sig]))
                labels.extend(["clutter"] * nv)

        # flare bursts inside their host cubes
        if self.flare_tabs:
            rates = np.array([fl.rate if fl.active(t) else 0.0
                              for fl, _, _ in self.flare_tabs])
            counts = rng.poisson(rates)
            nf = int(counts.sum())
            if nf > 0:
                slot = np.repeat([s for _, s, _ in self.flare_tabs], counts)
                lo = np.repeat(np.array([l for _, _, l in self.flare_tabs]),
                               counts, axis=0)
                pos = lo + rng.uniform(0.0, self.grid.edge_m, size=(nf, 3))
                sig = means[slot] + np.einsum(
                    "nij,nj->ni", self.cube_chol[slot],
                    rng.normal(size=(nf, SIGNAL_DIM)))
                mix_hit = rng.uniform(size=nf) < self.cube_mix_w[slot]
                sig[mix_hit] += self.cube_mix_off[slot[mix_hit]]
                vd = rng.uniform(-1.0, 1.0, size=nf) * self.cube_dspread[slot]
                parts.append(np.column_stack([pos, vd, sig]))
                labels.extend(["clutter"] * nf)

        # ghosts
        for pop in self.ghost_pops:
            g = pop["spec"]
            n = len(pop["birth"])
            u_pres = rng.uniform(size=n)
            jit = rng.normal(size=(n, 3))
            sn = rng.normal(size=(n, SIGNAL_DIM))
            du = rng.uniform(-1.0, 1.0, size=n)
            alive = (pop["birth"] <= t) & (t < pop["death"]) \
                & (u_pres < g.detect_prob)
            if not alive.any():
                continue
            age = (t - pop["birth"][alive])[:, None] * spec.dt
            pos = pop["p0"][alive] + pop["vel"][alive] * age \
                + jit[alive] * g.jitter_m
            if g.doppler_coupled:
                rad = np.linalg.norm(pos, axis=1)
                rad = np.where(rad == 0, 1.0, rad)
                vd = np.einsum("ni,ni->n", pop["vel"][alive], pos / rad[:, None]) \
                    + 0.1 * jit[alive][:, 0]
            else:
                vd = du[alive] * g.doppler_spread
            sig = g.signal.mean + np.einsum("ij,nj->ni", pop["chol"], sn[alive])
            parts.append(np.column_stack([pos, vd, sig]))
            labels.extend(["ghost"] * int(alive.sum()))

        # UAVs
        gt_uavs = []
        for u, sampler, chol in self.uav_samplers:
            u_det = rng.uniform()
            mnoise = rng.normal(size=3)
            dnoise = rng.normal()
            snoise = rng.normal(size=SIGNAL_DIM)
            end = spec.n_frames if u.end_frame is None else u.end_frame
            if not (u.start_frame <= t < end):
                continue
            tau = (t - u.start_frame) * spec.dt + u.phase_s
            pos = sampler.position(tau)
            vel = sampler.velocity(tau)
            gt_uavs.append(GroundTruthUav(u.uav_id, *pos, *vel))
            dropped = (u.dropout.dropped(t - u.start_frame)
                       if u.dropout else False)
            if dropped or u_det >= u.detect_prob:
                continue
            meas = pos + mnoise * u.meas_sigma_m
            rad = np.linalg.norm(pos)
            v_d = (vel @ (pos / rad) if rad > 0 else 0.0) \
                + dnoise * u.doppler_sigma
            sig = u.signal.mean + chol @ snoise
            parts.append(np.concatenate([meas, [v_d], sig])[None, :])
            labels.append("uav")

        pts = np.vstack(parts) if parts else np.zeros((0, 9))
        ts = t * spec.dt
        return (Frame(index=t, timestamp=ts, points=pts),
                GroundTruthFrame(index=t, timestamp=ts, uavs=gt_uavs,
                                 labels=labels))

    def frames(self, start: int = 0, stop: int | None = None):
        stop = self.n_frames if stop is None else stop
        for t in range(start, stop):
            yield self.frame(t)


def build_scene(spec: SceneSpec) -> Scene:
    """Validate and freeze a scene. Raises ValueError on bad specs."""
    return Scene(spec)
