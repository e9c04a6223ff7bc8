"""Shared fixtures.

The benchmark-scene artifacts (fitted fingerprint model, evaluation
stream, ablation report) are expensive, so they are built once per
session and shared between the pipeline tests and the acceptance gate.
"""
import time

import pytest

from skysift.benchmark import (BENCH_SEED, EVAL_FRAMES, FIT_FRAMES,
                               benchmark_scene, target_free_scene)
from skysift.fingerprint import fit_model
from skysift.pipeline import PipelineConfig, run_ablation, run_stream
from skysift.simulate import build_scene
from skysift.trajformer import default_weights_path, load_weights

BENCH_FIT_ALPHA = 0.01


@pytest.fixture(scope="session")
def bench_scene():
    return build_scene(benchmark_scene(BENCH_SEED))


@pytest.fixture(scope="session")
def bench_model(bench_scene):
    fit = (f for f, _ in bench_scene.frames(0, FIT_FRAMES))
    return fit_model(fit, bench_scene.spec.grid, alpha=BENCH_FIT_ALPHA)


@pytest.fixture(scope="session")
def bench_eval_frames(bench_scene):
    """Materialised (frame, truth) pairs for the evaluation window."""
    out = []
    for t in range(FIT_FRAMES, FIT_FRAMES + EVAL_FRAMES):
        frame, gt = bench_scene.frame(t)
        out.append((frame, gt))
    return out


@pytest.fixture(scope="session")
def bench_weights():
    return load_weights(str(default_weights_path()))


@pytest.fixture(scope="session")
def bench_ablation(bench_model, bench_eval_frames, bench_weights):
    """(report, wall_seconds) for the standard stage ladder."""
    cfg = PipelineConfig()
    t0 = time.perf_counter()
    report = run_ablation(bench_eval_frames, cfg, bench_model,
                          weights=bench_weights)
    wall = time.perf_counter() - t0
    return report, wall


@pytest.fixture(scope="session")
def target_free_metrics(bench_weights):
    """Full pipeline over a stream with no targets at all."""
    scene = build_scene(target_free_scene())
    model = fit_model((f for f, _ in scene.frames(0, FIT_FRAMES)),
                      scene.spec.grid, alpha=BENCH_FIT_ALPHA)
    res = run_stream(scene.frames(FIT_FRAMES, scene.spec.n_frames),
                     PipelineConfig(), model=model, weights=bench_weights)
    return res.metrics
