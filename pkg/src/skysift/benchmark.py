"""Seeded benchmark scenes for the evaluation suite.

benchmark_scene is the main fixture: a 1,700-frame scene whose first
700 frames are target-free (the fingerprint fit window) and whose last
1,000 frames carry 13 UAVs over all 8 path shapes, 30 ghost tracks,
and a ground-clutter bed tuned to the 174:1 noise-to-UAV point regime.
The other builders are smaller single-purpose scenes.
"""
from __future__ import annotations

import numpy as np

from .core import CubeGrid
from .paths import PATH_SHAPES
from .simulate import (ClutterCubeSpec, ClutterFieldSpec, DropoutSpec,
                       FlareSpec, GhostPopulationSpec, SceneSpec, SignalModel,
                       StructureZoneSpec, UavSpec)

BENCH_SEED = 20260
FIT_FRAMES = 700          # target-free head used to fit the fingerprint
EVAL_FRAMES = 1000
BENCH_FRAMES = FIT_FRAMES + EVAL_FRAMES

_GRID = dict(edge_m=40.0, origin=(-520.0, 40.0, 0.0),
             extent=(1040.0, 920.0, 400.0))


def _uav_signal() -> SignalModel:
    return SignalModel(np.array([14.0, 9.0, -82.0, -52.0, -60.0]),
                       np.diag([1.5, 1.0, 2.0, 2.0, 2.0]) ** 2)


def _ghost_signal() -> SignalModel:
    return SignalModel(np.array([10.0, 6.0, -88.0, -58.0, -66.0]),
                       np.diag([1.5, 1.2, 2.0, 2.0, 2.0]) ** 2)


def _zones(seed: int, count_x: int = 6, count_y: int = 5,
           reflectors: int = 20) -> list[StructureZoneSpec]:
    """Ground structure blocks on a staggered lattice, one cube apart."""
    zones = []
    zi = 0
    for b in range(count_y):
        for a in range(count_x):
            zrng = np.random.default_rng([seed, 23, zi])
            mean = (np.array([6.0, 3.0, -95.0, -65.0, -72.0])
                    + zrng.normal(size=5) * np.array([3.0, 2.0, 3.0, 3.0, 3.0]))
            sig = zrng.uniform(0.7, 1.3, size=5)
            zones.append(StructureZoneSpec(
                origin_cube=(1 + 4 * a, 1 + 4 * b, 0), span=(3, 3, 1),
                n_reflectors=reflectors,
                signal=SignalModel(mean, np.diag(sig ** 2)),
                jitter_xy_m=9.0, jitter_z_m=2.0,
                doppler_spread=float(zrng.uniform(1.5, 2.8))))
            zi += 1
    return zones


def _flare_hosts(seed: int) -> tuple[list[ClutterCubeSpec], list[FlareSpec]]:
    hrng = np.random.default_rng([seed, 29])
    hosts, flares = [], []
    for hi, (cube, period, length, rate, offset) in enumerate([
            ((8, 4, 1), 29, 8, 26.0, FIT_FRAMES + 3),
            ((16, 8, 0), 37, 9, 22.0, FIT_FRAMES + 19)]):
        mean = (np.array([6.0, 3.0, -95.0, -65.0, -72.0])
                + hrng.normal(size=5) * np.array([3.0, 2.0, 3.0, 3.0, 3.0]))
        sig = hrng.uniform(0.7, 1.3, size=5)
        hosts.append(ClutterCubeSpec(
            cube=cube, signal=SignalModel(mean, np.diag(sig ** 2)),
            rate=0.8, volatile=True,
            doppler_spread=float(hrng.uniform(1.2, 2.6))))
        flares.append(FlareSpec(cube=cube, period=period, length=length,
                                rate=rate, offset=offset))
    return hosts, flares


def _bench_field(n_cubes: int = 1850,
                 rate_range: tuple[float, float] = (0.72, 1.12)) -> ClutterFieldSpec:
    return ClutterFieldSpec(
        n_cubes=n_cubes, z_band=(0, 5), rate_range=rate_range,
        nongauss_fraction=0.25, nongauss_rate_scale=0.4,
        static_fraction=0.1, volatile_rate_scale=1.0,
        detect_prob=0.9, jitter_m=0.5)


def _bench_ghosts(start: int, stop: int) -> list[GhostPopulationSpec]:
    box = (-420.0, 420.0, 140.0, 860.0)
    return [
        GhostPopulationSpec(
            count=10, signal=_ghost_signal(), lifetime_range=(140, 260),
            spawn_range=(start, max(start + 1, stop - 260)), box_xy=box,
            altitude_range=(100.0, 300.0), jitter_m=2.0,
            drift_speed_range=(1.0, 5.0), doppler_spread=3.2,
            doppler_coupled=False, detect_prob=0.998),
        GhostPopulationSpec(
            count=20, signal=_ghost_signal(), lifetime_range=(24, 44),
            spawn_range=(start, max(start + 1, stop - 44)), box_xy=box,
            altitude_range=(100.0, 300.0), jitter_m=2.0,
            drift_speed_range=(1.0, 5.0), doppler_spread=3.2,
            doppler_coupled=False, detect_prob=0.996),
    ]


# the rescue dropout: a 3-frame burst that retires the pool entry and
# the track, then a 1-frame gap while the reborn chain is still young
_RESCUE = DropoutSpec(period=110, bursts=[(7, 3), (12, 1)])


# speeds sit under 9.5 m/s so that a single missed frame leaves the
# reappearing detection inside the 15 m association gate (2 frames of
# travel plus measurement noise); polygonal paths run slowest because
# their corners also add filter lag
_SHAPE_SPEED = {"line": 9.2, "circle": 8.8, "s_curve": 8.6,
                "figure_eight": 8.4, "square": 8.0, "diamond": 8.0,
                "m_shape": 7.8, "star": 7.5}
_SHAPE_SIZE = {"line": 300.0, "circle": 180.0, "s_curve": 220.0,
               "figure_eight": 200.0, "square": 230.0, "diamond": 240.0,
               "m_shape": 250.0, "star": 260.0}


def _bench_uavs(start: int) -> list[UavSpec]:
    sig = _uav_signal()
    shapes = list(PATH_SHAPES)
    origins = [(-330.0, 250.0), (-110.0, 250.0), (110.0, 250.0),
               (330.0, 250.0), (-330.0, 470.0), (-110.0, 470.0),
               (110.0, 470.0), (330.0, 470.0), (-330.0, 690.0),
               (-110.0, 690.0), (110.0, 690.0), (330.0, 690.0),
               (0.0, 850.0)]
    uavs = []
    for i, origin in enumerate(origins):
        shape = shapes[i % len(shapes)]
        uavs.append(UavSpec(
            uav_id=i + 1, shape=shape,
            size_m=_SHAPE_SIZE[shape] + 6.0 * (i % 3), origin_xy=origin,
            altitude_m=165.0 + 11.0 * i,
            speed_mps=_SHAPE_SPEED[shape] + 0.25 * (i % 3),
            signal=sig, heading_deg=25.0 * i, start_frame=start,
            phase_s=7.0 * i, detect_prob=0.95,
            dropout=_RESCUE if i in (0, 3, 5, 7, 9, 11) else None,
            meas_sigma_m=1.0, doppler_sigma=0.25))
    return uavs


def benchmark_scene(seed: int = BENCH_SEED) -> SceneSpec:
    spec = SceneSpec(
        seed=seed, n_frames=BENCH_FRAMES, grid=CubeGrid(**_GRID),
        clutter_field=_bench_field(),
        zones=_zones(seed),
        uavs=_bench_uavs(FIT_FRAMES),
        ghosts=_bench_ghosts(FIT_FRAMES, BENCH_FRAMES))
    hosts, flares = _flare_hosts(seed)
    spec.clutter_cubes = hosts
    spec.flares = flares
    return spec


def target_free_scene(seed: int = BENCH_SEED + 1,
                      eval_frames: int = 500) -> SceneSpec:
    """The benchmark noise bed with no UAVs at all."""
    n = FIT_FRAMES + eval_frames
    spec = SceneSpec(
        seed=seed, n_frames=n, grid=CubeGrid(**_GRID),
        clutter_field=_bench_field(),
        zones=_zones(seed),
        uavs=[],
        ghosts=_bench_ghosts(FIT_FRAMES, n))
    hosts, flares = _flare_hosts(seed)
    spec.clutter_cubes = hosts
    spec.flares = flares
    return spec


def percentile_scene(seed: int = 7001) -> SceneSpec:
    """Pure in-distribution volatile clutter for the k=80 removal check."""
    grid = CubeGrid(edge_m=40.0, origin=(-100.0, 40.0, 0.0),
                    extent=(200.0, 200.0, 80.0))
    return SceneSpec(
        seed=seed, n_frames=1400, grid=grid,
        clutter_field=ClutterFieldSpec(
            n_cubes=30, z_band=(0, 2), rate_range=(1.2, 1.8),
            nongauss_fraction=0.0, static_fraction=0.0))


def ratio_scene(seed: int = 7002) -> SceneSpec:
    """One UAV over volatile clutter tuned near 174 noise points/frame."""
    grid = CubeGrid(edge_m=40.0, origin=(-300.0, 40.0, 0.0),
                    extent=(600.0, 600.0, 200.0))
    return SceneSpec(
        seed=seed, n_frames=1100, grid=grid,
        clutter_field=ClutterFieldSpec(
            n_cubes=220, z_band=(0, 3), rate_range=(0.73, 0.77),
            nongauss_fraction=0.2, nongauss_rate_scale=1.0,
            static_fraction=0.0),
        uavs=[UavSpec(
            uav_id=1, shape="circle", size_m=220.0, origin_xy=(0.0, 340.0),
            altitude_m=150.0, speed_mps=10.0, signal=_uav_signal(),
            detect_prob=0.95, meas_sigma_m=1.0)])


def crossing_scene(seed: int = 7003) -> SceneSpec:
    """Two UAVs on perpendicular lines through the same xy point,
    separated by 18 m of altitude.

    Phases put both at the intersection simultaneously 85.7 s into the
    eval window (frame 634), mid-leg for each, so the closest approach
    is far from any turn-around at the line ends. Speeds stay low
    enough that even a two-frame detection gap leaves the reappearing
    detection inside the pool association gate.
    """
    grid = CubeGrid(edge_m=40.0, origin=(-300.0, 100.0, 0.0),
                    extent=(600.0, 600.0, 240.0))
    sig = _uav_signal()
    fit = 500
    return SceneSpec(
        seed=seed, n_frames=1000, grid=grid,
        clutter_field=ClutterFieldSpec(
            n_cubes=150, z_band=(0, 2), rate_range=(0.4, 0.6),
            nongauss_fraction=0.2, static_fraction=0.0),
        uavs=[
            UavSpec(uav_id=1, shape="line", size_m=400.0,
                    origin_xy=(0.0, 400.0), altitude_m=150.0, speed_mps=7.0,
                    signal=sig, heading_deg=0.0, start_frame=fit,
                    detect_prob=0.98, meas_sigma_m=1.0),
            UavSpec(uav_id=2, shape="line", size_m=400.0,
                    origin_xy=(0.0, 400.0), altitude_m=168.0, speed_mps=6.5,
                    signal=sig, heading_deg=90.0, start_frame=fit,
                    phase_s=6.59, detect_prob=0.98, meas_sigma_m=1.0)])
