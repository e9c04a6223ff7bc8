"""CLI tests: the simulate/fit/run/eval/ablate chain against an
in-process service, plus the --check exit paths."""
import json

import pytest
from click.testing import CliRunner

from skysift.cli import main

from test_pipeline import _mini_spec


def _invoke(*args):
    return CliRunner().invoke(main, list(args))


def _json_lines(output):
    return [json.loads(s) for s in output.strip().splitlines()
            if s.startswith("{")]


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Streams, model, and run outputs produced through the CLI chain."""
    base = tmp_path_factory.mktemp("cli")
    scene = base / "scene.json"
    _mini_spec(seed=5150).save(str(scene))
    paths = {"base": base, "scene": scene, "frames": base / "frames.jsonl",
             "truth": base / "truth.jsonl", "model": base / "model.json",
             "out": base / "out"}

    r = _invoke("simulate", "--scene", str(scene),
                "--frames", str(paths["frames"]),
                "--truth", str(paths["truth"]))
    assert r.exit_code == 0, r.output
    paths["simulate"] = json.loads(r.output.strip())

    r = _invoke("fit", "--frames", str(paths["frames"]),
                "--model", str(paths["model"]), "--scene", str(scene),
                "--count", "200", "--alpha", "0.001")
    assert r.exit_code == 0, r.output
    paths["fit"] = json.loads(r.output.strip())

    r = _invoke("run", "--frames", str(paths["frames"]),
                "--truth", str(paths["truth"]),
                "--model", str(paths["model"]),
                "--out-dir", str(paths["out"]), "--start", "200")
    assert r.exit_code == 0, r.output
    paths["run_lines"] = _json_lines(r.output)
    return paths


def test_simulate_reports_stream(ws):
    body = ws["simulate"]
    assert body["frames"] == 340
    assert body["points"]["uav"] > 0
    assert len(ws["frames"].read_text().splitlines()) == 340


def test_fit_reports_model(ws):
    body = ws["fit"]
    assert body["tau_sim"] > 0.0
    assert body["frames_used"] == 200
    assert ws["model"].is_file()


def test_run_emits_metrics_then_timings(ws):
    metrics, timings = ws["run_lines"]
    assert metrics["tracks"]["tp"] > 0
    assert metrics["tracks"]["f1"] is not None
    assert "timings" in timings
    assert timings["timings"]["frames"] == 140
    assert (ws["out"] / "tracks.jsonl").is_file()


def test_eval_matches_run(ws):
    r = _invoke("eval", "--tracks", str(ws["out"] / "tracks.jsonl"),
                "--truth", str(ws["truth"]))
    assert r.exit_code == 0, r.output
    ev = json.loads(r.output.strip())
    run_tracks = ws["run_lines"][0]["tracks"]
    for key in ("tp", "fp", "fn", "f1"):
        assert ev[key] == run_tracks[key], key


def test_run_check_pass(ws, tmp_path):
    checks = tmp_path / "checks.json"
    checks.write_text(json.dumps({"min_recall": 0.2, "max_loc_error_m": 9.0}))
    r = _invoke("run", "--frames", str(ws["frames"]),
                "--truth", str(ws["truth"]), "--model", str(ws["model"]),
                "--start", "200", "--check", str(checks))
    assert r.exit_code == 0, r.output
    assert "all checks passed" in r.output


def test_run_check_fail_exits_2(ws, tmp_path):
    checks = tmp_path / "checks.json"
    checks.write_text(json.dumps({"min_f1": 0.999999,
                                  "max_false_per_frame": 0.0}))
    r = _invoke("run", "--frames", str(ws["frames"]),
                "--truth", str(ws["truth"]), "--model", str(ws["model"]),
                "--start", "200", "--check", str(checks))
    assert r.exit_code == 2
    assert "CHECK FAILED min_f1" in r.stderr


def test_ablate_prints_stage_lines(ws):
    r = _invoke("ablate", "--frames", str(ws["frames"]),
                "--truth", str(ws["truth"]), "--model", str(ws["model"]),
                "--eval-from", "200")
    assert r.exit_code == 0, r.output
    lines = r.output.strip().splitlines()
    stage_lines = [s for s in lines if ": f1=" in s]
    assert [s.split(":")[0] for s in stage_lines] == [
        "tracker_only", "point_filter", "spatial_confidence",
        "velocity_confidence", "full"]
    tail = json.loads(lines[-1])
    assert len(tail["f1_ladder"]) == 5
    assert isinstance(tail["strictly_increasing"], bool)


def test_toggles_off_run_needs_no_model(ws, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"toggles": {
        "point_filter": False, "spatial_confidence": False,
        "velocity_confidence": False, "classifier": False}}))
    r = _invoke("run", "--frames", str(ws["frames"]),
                "--truth", str(ws["truth"]), "--config", str(cfg),
                "--start", "200", "--count", "40")
    assert r.exit_code == 0, r.output
    metrics = _json_lines(r.output)[0]
    assert metrics["frames_scored"] == 40


def test_missing_scene_file_fails_cleanly(tmp_path):
    r = _invoke("simulate", "--scene", str(tmp_path / "nope.json"),
                "--frames", str(tmp_path / "f.jsonl"))
    assert r.exit_code == 1
    assert "not found" in r.output + r.stderr
