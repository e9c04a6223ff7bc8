"""Line-delimited JSON streams for frames, truth, and pipeline outputs.

One JSON object per line. Floats are emitted with Python's shortest
round-trip repr, so parse(serialise(x)) is bit-exact.

Schemas:
    frame   {"t": int, "ts": float, "pts": [[9 floats], ...]}
    truth   {"t": int, "ts": float, "uavs": [[id, x, y, z, vx, vy, vz], ...],
             "labels": [str, ...]}            # labels align with the frame's pts
    track   {"t": int, "id": int, "status": str, "pos": [3], "vel": [3],
             "mp": [2], "emitted": bool}
    trackobs{"t": int, "id": int, "status": str, "obj": [9 floats]}
    object  {"t": int, "key": int, "obj": [9 floats], "n": int,
             "cs": float, "cv": float, "kept": bool}
"""
from __future__ import annotations

import json
from typing import Iterable, Iterator

import numpy as np

from .core import Frame, GroundTruthFrame, GroundTruthUav


def write_jsonl(path: str, objs: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fp:
        for obj in objs:
            fp.write(json.dumps(obj))
            fp.write("\n")
            n += 1
    return n


def read_jsonl(path: str) -> Iterator[dict]:
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if line:
                yield json.loads(line)


# -- frames -------------------------------------------------------------

def frame_to_obj(frame: Frame) -> dict:
    return {"t": frame.index, "ts": frame.timestamp,
            "pts": frame.points.tolist()}


def frame_from_obj(obj: dict) -> Frame:
    pts = np.asarray(obj["pts"], dtype=float)
    return Frame(index=int(obj["t"]), timestamp=float(obj["ts"]), points=pts)


def write_frames(path: str, frames: Iterable[Frame]) -> int:
    return write_jsonl(path, (frame_to_obj(f) for f in frames))


def read_frames(path: str) -> Iterator[Frame]:
    for obj in read_jsonl(path):
        yield frame_from_obj(obj)


# -- ground truth -------------------------------------------------------

def truth_to_obj(gt: GroundTruthFrame) -> dict:
    return {
        "t": gt.index,
        "ts": gt.timestamp,
        "uavs": [[u.uav_id, u.x, u.y, u.z, u.vx, u.vy, u.vz] for u in gt.uavs],
        "labels": list(gt.labels),
    }


def truth_from_obj(obj: dict) -> GroundTruthFrame:
    uavs = [GroundTruthUav(int(row[0]), *(float(v) for v in row[1:7]))
            for row in obj["uavs"]]
    return GroundTruthFrame(index=int(obj["t"]), timestamp=float(obj["ts"]),
                            uavs=uavs, labels=list(obj["labels"]))


def write_truth(path: str, gts: Iterable[GroundTruthFrame]) -> int:
    return write_jsonl(path, (truth_to_obj(g) for g in gts))


def read_truth(path: str) -> Iterator[GroundTruthFrame]:
    for obj in read_jsonl(path):
        yield truth_from_obj(obj)
