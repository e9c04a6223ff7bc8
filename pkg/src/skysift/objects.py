"""Object-level filtering: clustering, frame association, confidences.

Points are grouped into objects per frame, objects are matched one to
one against the remembered pool from earlier frames, and each object
accumulates two decaying confidences: spatial (was it seen again) and
velocity (does its displacement agree with its Doppler). Objects whose
enabled confidences all sit below threshold are dropped from the
tracker input but stay in the pool, so a later rematch resumes from
the decayed value instead of zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .assign import gated_assignment
from .core import COL_DOPPLER, COL_X, COL_Z, FRAME_DT, Frame, SIGNAL_COLS


@dataclass
class ClusterConfig:
    """Distance metric and radius for point grouping.

    The metric is Euclidean over (space_weight * dx, dy, dz,
    doppler_weight * dv); a pair closer than radius_m is connected and
    clusters are the connected components, singletons included.
    """

    space_weight: float = 1.0
    doppler_weight: float = 3.0
    radius_m: float = 10.0


@dataclass
class Detection:
    """One clustered object in a single frame, before pool matching."""

    centroid: np.ndarray       # (3,)
    doppler: float
    signal_mean: np.ndarray    # (5,)
    n_points: int

    def obj_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.centroid, [self.doppler], self.signal_mean])


def cluster_points(points: np.ndarray, cfg: ClusterConfig) -> list[Detection]:
    """Group a frame's points into detections.

    Each detection averages the positions, Doppler, and signal metrics
    of its member points. Output order follows the lowest member index.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n == 0:
        return []
    scaled = np.column_stack([
        points[:, COL_X:COL_Z + 1] * cfg.space_weight,
        points[:, COL_DOPPLER] * cfg.doppler_weight,
    ])
    pairs = cKDTree(scaled).query_pairs(cfg.radius_m, output_type="ndarray")
    if len(pairs):
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                           shape=(n, n))
        _, labels = connected_components(graph, directed=False)
    else:
        labels = np.arange(n)

    # per-label means via bincount, emitted in lowest-member order
    order = np.unique(labels, return_index=True)[1].argsort()
    counts = np.bincount(labels)
    sums = np.zeros((len(counts), 9))
    for c in range(9):
        sums[:, c] = np.bincount(labels, weights=points[:, c])
    means = sums / counts[:, None]

    dets = []
    for lab in np.unique(labels)[order]:
        dets.append(Detection(
            centroid=means[lab, COL_X:COL_Z + 1],
            doppler=float(means[lab, COL_DOPPLER]),
            signal_mean=means[lab, SIGNAL_COLS],
            n_points=int(counts[lab]),
        ))
    return dets


def associate(prev: np.ndarray, curr: np.ndarray, gate_m: float = 15.0):
    """One-to-one centroid matching between consecutive frames.

    Returns (i, j, distance) triples; pairs farther than the gate never
    match.
    """
    return gated_assignment(prev, curr, gate_m)


def radial_velocity(curr: np.ndarray, prev: np.ndarray, dt: float) -> float:
    """Radial component of the displacement velocity, seen from the origin."""
    curr = np.asarray(curr, dtype=float)
    rng = np.linalg.norm(curr)
    if rng == 0.0 or dt <= 0.0:
        return 0.0
    v = (curr - np.asarray(prev, dtype=float)) / dt
    return float(v @ (curr / rng))


@dataclass
class ConsistencyConfig:
    """Agreement test between displacement and Doppler velocities."""

    tau_abs: float = 2.0
    tau_ratio: float = 2.0
    eps_v: float = 0.1


def velocity_consistent(v_r: float, doppler: float,
                        cfg: ConsistencyConfig) -> bool:
    """True when the two radial velocity estimates agree.

    Both magnitudes under eps_v: the ratio and sign clauses are waived
    (a hovering target has no usable direction). Exactly one under
    eps_v: inconsistent.
    """
    if abs(v_r - doppler) >= cfg.tau_abs:
        return False
    small_r = abs(v_r) < cfg.eps_v
    small_d = abs(doppler) < cfg.eps_v
    if small_r and small_d:
        return True
    if small_r or small_d:
        return False
    hi, lo = max(abs(v_r), abs(doppler)), min(abs(v_r), abs(doppler))
    if hi / lo >= cfg.tau_ratio:
        return False
    return (v_r > 0) == (doppler > 0)


@dataclass
class ConfidenceConfig:
    """Confidence recursion and discrimination thresholds."""

    gamma_s: float = 0.9
    gamma_v: float = 0.9
    tau_s: float = 1.7
    tau_v: float = 1.1
    gate_m: float = 15.0
    stale_frames: int = 3


@dataclass
class ObjectState:
    """A pooled object with its confidence state."""

    key: int
    centroid: np.ndarray
    doppler: float
    signal_mean: np.ndarray
    n_points: int
    c_s: float
    c_v: float
    last_matched: int
    last_iv: bool | None = None

    def obj_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.centroid, [self.doppler], self.signal_mean])


def discriminate(c_s: float, c_v: float, cfg: ConfidenceConfig,
                 use_spatial: bool = True, use_velocity: bool = True) -> bool:
    """Keep/drop decision; True means keep.

    An object is dropped only when every enabled confidence is strictly
    below its threshold; with no confidence enabled everything is kept.
    """
    checks = []
    if use_spatial:
        checks.append(c_s < cfg.tau_s)
    if use_velocity:
        checks.append(c_v < cfg.tau_v)
    if not checks:
        return True
    return not all(checks)


@dataclass
class ObjectFilterResult:
    """Per-frame outcome: all current detections plus the kept subset."""

    objects: list[ObjectState]
    kept: list[ObjectState]


class ObjectFilter:
    """Stateful object-confidence stage.

    Pool entries missed on a frame decay by gamma and are evicted after
    stale_frames consecutive misses; a dropped object therefore keeps
    its confidence state while it remains in the pool.
    """

    def __init__(self, cluster_cfg: ClusterConfig | None = None,
                 consistency_cfg: ConsistencyConfig | None = None,
                 confidence_cfg: ConfidenceConfig | None = None,
                 dt: float = FRAME_DT,
                 use_spatial: bool = True, use_velocity: bool = True):
        self.cluster_cfg = cluster_cfg or ClusterConfig()
        self.consistency_cfg = consistency_cfg or ConsistencyConfig()
        self.confidence_cfg = confidence_cfg or ConfidenceConfig()
        self.dt = dt
        self.use_spatial = use_spatial
        self.use_velocity = use_velocity
        self.pool: dict[int, ObjectState] = {}
        self._next_key = 0

    def step(self, frame: Frame) -> ObjectFilterResult:
        dets = cluster_points(frame.points, self.cluster_cfg)
        cfg = self.confidence_cfg
        prev = sorted(self.pool.values(), key=lambda s: s.key)
        matches = {}
        if prev and dets:
            prev_pos = np.stack([s.centroid for s in prev])
            det_pos = np.stack([d.centroid for d in dets])
            for i, j, _ in associate(prev_pos, det_pos, cfg.gate_m):
                matches[j] = prev[i]

        current: list[ObjectState] = []
        matched_keys = set()
        for j, det in enumerate(dets):
            hit = matches.get(j)
            if hit is None:
                state = ObjectState(
                    key=self._next_key, centroid=det.centroid,
                    doppler=det.doppler, signal_mean=det.signal_mean,
                    n_points=det.n_points, c_s=0.0, c_v=0.0,
                    last_matched=frame.index)
                self._next_key += 1
            else:
                gap = max(frame.index - hit.last_matched, 1)
                v_r = radial_velocity(det.centroid, hit.centroid, gap * self.dt)
                iv = velocity_consistent(v_r, det.doppler, self.consistency_cfg)
                state = ObjectState(
                    key=hit.key, centroid=det.centroid, doppler=det.doppler,
                    signal_mean=det.signal_mean, n_points=det.n_points,
                    c_s=cfg.gamma_s * (hit.c_s + 1.0),
                    c_v=cfg.gamma_v * (hit.c_v + (1.0 if iv else 0.0)),
                    last_matched=frame.index, last_iv=iv)
                matched_keys.add(hit.key)
            current.append(state)
            self.pool[state.key] = state

        # decay and expire pool entries nothing matched this frame
        for key in list(self.pool):
            if key in matched_keys or self.pool[key].last_matched == frame.index:
                continue
            st = self.pool[key]
            if frame.index - st.last_matched >= cfg.stale_frames:
                del self.pool[key]
            else:
                self.pool[key] = ObjectState(
                    key=st.key, centroid=st.centroid, doppler=st.doppler,
                    signal_mean=st.signal_mean, n_points=st.n_points,
                    c_s=cfg.gamma_s * st.c_s, c_v=cfg.gamma_v * st.c_v,
                    last_matched=st.last_matched, last_iv=st.last_iv)

        kept = [s for s in current
                if discriminate(s.c_s, s.c_v, cfg,
                                self.use_spatial, self.use_velocity)]
        return ObjectFilterResult(objects=current, kept=kept)
