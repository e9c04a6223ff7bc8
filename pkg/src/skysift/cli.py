"""Command-line client for the pipeline service.

Every subcommand drives the HTTP service: against a remote server when
--server is given, otherwise against an in-process instance, so both
paths exercise identical code. File paths are resolved on the host
running the service.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click


def _client(server: str | None):
    if server:
        import httpx
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    from starlette.testclient import TestClient
    from .service.app import app
    return TestClient(app)


def _post(server: str | None, endpoint: str, payload: dict) -> dict:
    with _client(server) as client:
        resp = client.post(endpoint, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{endpoint} failed ({resp.status_code}): "
                                   f"{detail}")
    return resp.json()


def _load_json(path: str | None, what: str):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise click.ClickException(f"{what} not found: {path}")
    return json.loads(p.read_text())


def _apply_checks(metrics: dict, checks: dict) -> list[str]:
    """Compare a flat metrics dict against threshold rules."""
    tracks = metrics.get("tracks", metrics)
    rules = [
        ("min_f1", tracks.get("f1"), lambda v, t: v is not None and v >= t),
        ("min_recall", tracks.get("recall"),
         lambda v, t: v is not None and v >= t),
        ("min_precision", tracks.get("precision"),
         lambda v, t: v is not None and v >= t),
        ("max_loc_error_m", tracks.get("mean_loc_error_m"),
         lambda v, t: v is not None and v <= t),
        ("max_false_per_frame", tracks.get("false_per_frame"),
         lambda v, t: v is not None and v <= t),
        ("max_fp_frame_fraction", tracks.get("fp_frame_fraction"),
         lambda v, t: v is not None and v <= t),
    ]
    failures = []
    for key, value, ok in rules:
        if key in checks and not ok(value, checks[key]):
            failures.append(f"{key}: wanted {checks[key]}, got {value}")
    return failures


def _finish_with_checks(metrics: dict, check_path: str | None):
    if check_path is None:
        return
    checks = _load_json(check_path, "check thresholds")
    failures = _apply_checks(metrics, checks)
    for f in failures:
        click.echo(f"CHECK FAILED {f}", err=True)
    if failures:
        sys.exit(2)
    click.echo("all checks passed")


@click.group()
def main():
    """Point-cloud noise filtering and UAV tracking."""


@main.command()
@click.option("--scene", "scene_path", required=True, help="scene spec JSON")
@click.option("--frames", "frames_path", required=True, help="output frame stream")
@click.option("--truth", "truth_path", default=None, help="output truth stream")
@click.option("--start", default=0, show_default=True)
@click.option("--stop", default=None, type=int)
@click.option("--server", default=None, help="service URL; in-process if unset")
def simulate(scene_path, frames_path, truth_path, start, stop, server):
    """Generate a synthetic frame stream from a scene spec."""
    payload = {"scene_path": str(Path(scene_path).absolute()),
               "frames_path": frames_path, "truth_path": truth_path,
               "start": start, "stop": stop}
    if not server:
        payload["scene"] = _load_json(scene_path, "scene spec")
        payload.pop("scene_path")
    out = _post(server, "/simulate", payload)
    click.echo(json.dumps(out, sort_keys=True))


@main.command()
@click.option("--frames", "frames_path", required=True)
@click.option("--model", "model_path", required=True, help="output model file")
@click.option("--scene", "scene_path", default=None,
              help="scene spec to take the cube grid from")
@click.option("--grid", "grid_path", default=None, help="cube grid JSON")
@click.option("--start", default=0, show_default=True)
@click.option("--count", default=None, type=int)
@click.option("--percentile", default=80.0, show_default=True)
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--min-samples", default=50, show_default=True)
@click.option("--server", default=None)
def fit(frames_path, model_path, scene_path, grid_path, start, count,
        percentile, alpha, min_samples, server):
    """Fit the per-cube noise fingerprint model on noise-only frames."""
    payload = {"frames_path": frames_path, "model_path": model_path,
               "grid": _load_json(grid_path, "grid"),
               "scene_path": scene_path, "start": start, "count": count,
               "percentile": percentile, "alpha": alpha,
               "min_samples": min_samples}
    out = _post(server, "/fit", payload)
    click.echo(json.dumps(out, sort_keys=True))


@main.command()
@click.option("--frames", "frames_path", required=True)
@click.option("--truth", "truth_path", default=None)
@click.option("--model", "model_path", default=None)
@click.option("--config", "config_path", default=None, help="pipeline config JSON")
@click.option("--out-dir", default=None, help="write track/object streams here")
@click.option("--start", default=0, show_default=True)
@click.option("--count", default=None, type=int)
@click.option("--eval-from", default=None, type=int)
@click.option("--check", "check_path", default=None,
              help="threshold JSON; nonzero exit on violation")
@click.option("--server", default=None)
def run(frames_path, truth_path, model_path, config_path, out_dir, start,
        count, eval_from, check_path, server):
    """Run the full pipeline over a frame stream."""
    payload = {"frames_path": frames_path, "truth_path": truth_path,
               "model_path": model_path,
               "config": _load_json(config_path, "pipeline config"),
               "out_dir": out_dir, "start": start, "count": count,
               "eval_from": eval_from}
    out = _post(server, "/run", payload)
    click.echo(json.dumps(out["metrics"], sort_keys=True))
    click.echo(json.dumps({"timings": out["timings"]}, sort_keys=True))
    _finish_with_checks(out["metrics"], check_path)


@main.command("eval")
@click.option("--tracks", "tracks_path", required=True,
              help="tracks.jsonl from a run")
@click.option("--truth", "truth_path", required=True)
@click.option("--gate", "gate_m", default=10.0, show_default=True)
@click.option("--report", "report_path", default=None)
@click.option("--check", "check_path", default=None)
@click.option("--server", default=None)
def eval_cmd(tracks_path, truth_path, gate_m, report_path, check_path, server):
    """Score emitted tracks against a truth stream."""
    out = _post(server, "/eval", {"tracks_path": tracks_path,
                                  "truth_path": truth_path, "gate_m": gate_m,
                                  "report_path": report_path})
    click.echo(json.dumps(out["metrics"], sort_keys=True))
    _finish_with_checks(out["metrics"], check_path)


@main.command()
@click.option("--frames", "frames_path", required=True)
@click.option("--truth", "truth_path", required=True)
@click.option("--model", "model_path", required=True)
@click.option("--config", "config_path", default=None)
@click.option("--eval-from", default=None, type=int)
@click.option("--report", "report_path", default=None)
@click.option("--check", "require_ladder", is_flag=True,
              help="nonzero exit unless F1 strictly climbs the ladder")
@click.option("--server", default=None)
def ablate(frames_path, truth_path, model_path, config_path, eval_from,
           report_path, require_ladder, server):
    """Run the stage ablation ladder and report per-stage metrics."""
    out = _post(server, "/ablate",
                {"frames_path": frames_path, "truth_path": truth_path,
                 "model_path": model_path,
                 "config": _load_json(config_path, "pipeline config"),
                 "eval_from": eval_from, "report_path": report_path})
    report = out["report"]
    for stage in report["stages"]:
        t = stage["metrics"]["tracks"]
        click.echo(f"{stage['name']}: f1={t['f1']} recall={t['recall']} "
                   f"precision={t['precision']}")
    click.echo(json.dumps({"f1_ladder": report["f1_ladder"],
                           "strictly_increasing":
                           report["strictly_increasing"]}, sort_keys=True))
    if require_ladder and not report["strictly_increasing"]:
        click.echo("CHECK FAILED f1 ladder not strictly increasing", err=True)
        sys.exit(2)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the pipeline service."""
    import uvicorn
    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
