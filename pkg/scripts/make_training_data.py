"""Produce classifier training dumps from benchmark scene variants.

For each seed this fits the fingerprint model on the scene's fit
window, runs the pipeline with the trajectory classifier disabled, and
leaves track_obs.jsonl plus a truth stream in <out>/<seed>/. The
trainer's build-dataset step consumes those two files.

Training seeds deliberately differ from the benchmark eval seed so the
classifier never trains on the exact frames it is scored on.
"""
import argparse
import sys
from pathlib import Path

from skysift.benchmark import BENCH_FRAMES, FIT_FRAMES, benchmark_scene
from skysift.fingerprint import fit_model
from skysift.pipeline import PipelineConfig, StageToggles, run_stream
from skysift.simulate import Scene
from skysift.streams import write_truth

TRAIN_SEEDS = (20270, 20271)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="training_data")
    ap.add_argument("--seeds", type=int, nargs="*", default=list(TRAIN_SEEDS))
    args = ap.parse_args(argv)

    for seed in args.seeds:
        out = Path(args.out) / str(seed)
        out.mkdir(parents=True, exist_ok=True)
        spec = benchmark_scene(seed)
        scene = Scene(spec)
        print(f"[{seed}] fitting fingerprint model", flush=True)
        model = fit_model([scene.frame(t)[0] for t in range(FIT_FRAMES)],
                          spec.grid, alpha=0.01)
        stream = (scene.frame(t) for t in range(FIT_FRAMES, BENCH_FRAMES))
        cfg = PipelineConfig(toggles=StageToggles(
            point_filter=True, spatial_confidence=True,
            velocity_confidence=True, classifier=False))
        print(f"[{seed}] running pipeline", flush=True)
        res = run_stream(stream, cfg, model=model, out_dir=str(out))
        write_truth(str(out / "truth.jsonl"),
                    (scene.frame(t)[1] for t in range(FIT_FRAMES,
                                                      BENCH_FRAMES)))
        tr = res.metrics["tracks"]
        print(f"[{seed}] done: f1={tr['f1']:.3f} recall={tr['recall']:.3f}",
              flush=True)


if __name__ == "__main__":
    sys.exit(main())
