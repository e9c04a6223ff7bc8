"""HTTP service tests: batch endpoints on real files, then sessions."""
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import skysift
from skysift.core import FRAME_DT
from skysift.fingerprint import NoiseFingerprintModel
from skysift.service.app import app
from skysift.simulate import build_scene

from test_pipeline import _mini_spec, _moving_frames


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def ws(tmp_path_factory, client):
    """Workspace: simulated streams plus a fitted fingerprint model."""
    base = tmp_path_factory.mktemp("svc")
    spec = _mini_spec()
    scene_path = base / "scene.json"
    spec.save(str(scene_path))
    paths = {"base": base, "scene": scene_path,
             "frames": base / "frames.jsonl", "truth": base / "truth.jsonl",
             "model": base / "model.json"}
    r = client.post("/simulate", json={
        "scene_path": str(scene_path), "frames_path": str(paths["frames"]),
        "truth_path": str(paths["truth"])})
    assert r.status_code == 200, r.text
    r = client.post("/fit", json={
        "frames_path": str(paths["frames"]), "scene_path": str(scene_path),
        "model_path": str(paths["model"]), "count": 200, "alpha": 0.001})
    assert r.status_code == 200, r.text
    paths["fit"] = r.json()
    return paths


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["version"] == skysift.__version__


class TestSimulate:
    def test_inline_scene(self, client, tmp_path):
        spec = _mini_spec(seed=6006)
        spec.n_frames = 40
        r = client.post("/simulate", json={
            "scene": spec.to_dict(),
            "frames_path": str(tmp_path / "f.jsonl"),
            "truth_path": str(tmp_path / "t.jsonl")})
        assert r.status_code == 200
        body = r.json()
        assert body["frames"] == 40
        assert set(body["points"]) == {"uav", "clutter", "ghost"}
        assert body["points"]["clutter"] > 0
        lines = (tmp_path / "f.jsonl").read_text().splitlines()
        assert len(lines) == 40
        # reported point counts match the stream that was written
        total = sum(len(json.loads(s)["pts"]) for s in lines)
        assert total == sum(body["points"].values())
        assert len((tmp_path / "t.jsonl").read_text().splitlines()) == 40

    def test_scene_and_scene_path_are_exclusive(self, client, ws, tmp_path):
        out = str(tmp_path / "f.jsonl")
        r = client.post("/simulate", json={"frames_path": out})
        assert r.status_code == 422
        r = client.post("/simulate", json={
            "scene": {"seed": 1}, "scene_path": str(ws["scene"]),
            "frames_path": out})
        assert r.status_code == 422
        assert "exactly one" in r.json()["detail"]

    def test_bad_spec_rejected(self, client, tmp_path):
        spec = _mini_spec().to_dict()
        spec["clutter_field"]["n_cubes"] = 10 ** 6
        r = client.post("/simulate", json={
            "scene": spec, "frames_path": str(tmp_path / "f.jsonl")})
        assert r.status_code == 422
        assert "bad scene spec" in r.json()["detail"]


class TestFit:
    def test_fit_response_matches_saved_model(self, ws):
        fit = ws["fit"]
        assert fit["frames_used"] == 200
        assert fit["modeled_cubes"] >= 1
        model = NoiseFingerprintModel.load(str(ws["model"]))
        assert model.tau_sim == pytest.approx(fit["tau_sim"])
        assert len(model.cubes) == fit["cubes"]

    def test_grid_and_scene_path_are_exclusive(self, client, ws):
        r = client.post("/fit", json={
            "frames_path": str(ws["frames"]), "model_path": "m.json"})
        assert r.status_code == 422
        assert "exactly one" in r.json()["detail"]

    def test_empty_window_rejected(self, client, ws):
        r = client.post("/fit", json={
            "frames_path": str(ws["frames"]), "scene_path": str(ws["scene"]),
            "model_path": "m.json", "start": 10 ** 6})
        assert r.status_code == 422
        assert "no frames" in r.json()["detail"]

    def test_missing_frames_file_is_404(self, client, ws):
        r = client.post("/fit", json={
            "frames_path": "/nonexistent/f.jsonl",
            "scene_path": str(ws["scene"]), "model_path": "m.json"})
        assert r.status_code == 404


class TestRunAndEval:
    def test_run_requires_model_for_point_filter(self, client, ws):
        r = client.post("/run", json={"frames_path": str(ws["frames"])})
        assert r.status_code == 422
        assert "model_path missing" in r.json()["detail"]

    def test_run_writes_outputs_and_eval_agrees(self, client, ws):
        out_dir = ws["base"] / "out"
        r = client.post("/run", json={
            "frames_path": str(ws["frames"]), "truth_path": str(ws["truth"]),
            "model_path": str(ws["model"]), "out_dir": str(out_dir),
            "start": 200})
        assert r.status_code == 200
        body = r.json()
        tracks = body["metrics"]["tracks"]
        assert body["timings"]["frames"] == 140
        assert tracks["tp"] > 0
        assert (out_dir / "metrics.json").exists()
        assert (out_dir / "tracks.jsonl").exists()
        saved = json.loads((out_dir / "metrics.json").read_text())
        assert saved == body["metrics"]

        # rescoring the written track stream reproduces the run metrics
        r = client.post("/eval", json={
            "tracks_path": str(out_dir / "tracks.jsonl"),
            "truth_path": str(ws["truth"]),
            "report_path": str(out_dir / "eval.json")})
        assert r.status_code == 200
        ev = r.json()["metrics"]
        for key in ("tp", "fp", "fn", "precision", "recall", "f1"):
            assert ev[key] == tracks[key], key
        assert (out_dir / "eval.json").exists()

    def test_eval_missing_stream_is_404(self, client, ws):
        r = client.post("/eval", json={
            "tracks_path": "/nonexistent/tracks.jsonl",
            "truth_path": str(ws["truth"])})
        assert r.status_code == 404


class TestAblate:
    def test_report_has_stage_ladder(self, client, ws):
        report_path = ws["base"] / "ablation.json"
        r = client.post("/ablate", json={
            "frames_path": str(ws["frames"]), "truth_path": str(ws["truth"]),
            "model_path": str(ws["model"]), "eval_from": 200,
            "report_path": str(report_path)})
        assert r.status_code == 200
        report = r.json()["report"]
        assert [s["name"] for s in report["stages"]] == [
            "tracker_only", "point_filter", "spatial_confidence",
            "velocity_confidence", "full"]
        assert len(report["f1_ladder"]) == 5
        assert json.loads(report_path.read_text()) == report


class TestSessions:
    def test_lifecycle(self, client):
        cfg = {"toggles": {"point_filter": False, "spatial_confidence": False,
                           "velocity_confidence": False, "classifier": False}}
        r = client.post("/sessions", json={"config": cfg})
        assert r.status_code == 200
        sid = r.json()["session_id"]

        frames = _moving_frames(8)
        last = None
        for f in frames:
            r = client.post(f"/sessions/{sid}/frames", json={
                "t": f.index, "ts": f.timestamp, "pts": f.points.tolist()})
            assert r.status_code == 200
            last = r.json()
        assert last["t"] == 7
        assert last["live_tracks"] == 1
        # confirmed but unverified tracks are emitted when the classifier
        # stage is off
        assert len(last["emitted"]) == 1
        est = np.asarray(last["emitted"][0]["pos"])
        assert np.linalg.norm(est - frames[-1].points[0, :3]) < 10.0

        r = client.get(f"/sessions/{sid}")
        assert r.status_code == 200
        info = r.json()
        assert info["frames_processed"] == 8
        assert info["live_tracks"] == 1
        assert info["config"]["toggles"]["classifier"] is False

        r = client.delete(f"/sessions/{sid}")
        assert r.status_code == 200 and r.json() == {"deleted": sid}
        assert client.get(f"/sessions/{sid}").status_code == 404
        assert client.delete(f"/sessions/{sid}").status_code == 404
        r = client.post(f"/sessions/{sid}/frames",
                        json={"t": 0, "ts": 0.0, "pts": []})
        assert r.status_code == 404

    def test_create_requires_model_when_filtering(self, client):
        r = client.post("/sessions", json={})
        assert r.status_code == 422
        assert "model_path missing" in r.json()["detail"]

    def test_bad_frame_shape_rejected(self, client):
        cfg = {"toggles": {"point_filter": False, "spatial_confidence": False,
                           "velocity_confidence": False, "classifier": False}}
        sid = client.post("/sessions", json={"config": cfg}).json()["session_id"]
        r = client.post(f"/sessions/{sid}/frames", json={
            "t": 0, "ts": 0.0, "pts": [[1.0, 2.0, 3.0]]})
        assert r.status_code == 422
        client.delete(f"/sessions/{sid}")
