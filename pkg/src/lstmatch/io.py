"""JSON Lines readers and writers for detections, ground truth and trajectories.

Detections: ``{video_id, frame, box, score, query, text}``.
Ground truth: ``{video_id, track_id, frame, box, text}``.
Trajectories: ``{video_id, track_id, frame, box, score, text}``.

Writers emit keys in sorted order with fixed float formatting so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .matcher import GtTrack
from .pipeline import Trajectory
from .rescoring import Detection
from .synth import Scene


class FormatError(ValueError):
    pass


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _floats(values) -> list[float]:
    return [float(v) for v in values]


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(_dump(r) + "\n")
            n += 1
    return n


def _require(rec: dict, keys: tuple[str, ...], path) -> None:
    missing = [k for k in keys if k not in rec]
    if missing:
        raise FormatError(f"{path}: record missing {missing}: {rec}")


# ------------------------------------------------------------------ detections


def detection_records(video_id: str, detections: Iterable[Iterable[Detection]]) -> Iterator[dict]:
    for frame_dets in detections:
        for d in frame_dets:
            yield {"video_id": video_id, "frame": int(d.frame), "box": _floats(d.box), "score": float(d.score),
                   "query": _floats(d.query), "text": d.text}


def read_detections(path: str | Path) -> dict[str, dict[int, list[Detection]]]:
    """``{video_id: {frame: [Detection, ...]}}`` in file order within each frame."""
    out: dict[str, dict[int, list[Detection]]] = defaultdict(lambda: defaultdict(list))
    for rec in iter_jsonl(path):
        _require(rec, ("video_id", "frame", "box", "score", "query"), path)
        box = rec["box"]
        if len(box) != 4:
            raise FormatError(f"{path}: box must have 4 numbers: {rec}")
        d = Detection(int(rec["frame"]), box, float(rec["score"]), np.asarray(rec["query"], dtype=np.float64),
                      rec.get("text", ""))
        out[str(rec["video_id"])][d.frame].append(d)
    return {v: dict(frames) for v, frames in out.items()}


# ------------------------------------------------------------------ ground truth


def gt_records(video_id: str, gt: Iterable[GtTrack]) -> Iterator[dict]:
    for track in sorted(gt, key=lambda g: g.track_id):
        for f in sorted(track.boxes):
            yield {"video_id": video_id, "track_id": int(track.track_id), "frame": int(f),
                   "box": _floats(track.boxes[f]), "text": track.text}


def read_gt(path: str | Path) -> dict[str, list[GtTrack]]:
    tracks: dict[str, dict[int, GtTrack]] = defaultdict(dict)
    for rec in iter_jsonl(path):
        _require(rec, ("video_id", "track_id", "frame", "box"), path)
        vid, tid = str(rec["video_id"]), int(rec["track_id"])
        track = tracks[vid].setdefault(tid, GtTrack(tid, {}, rec.get("text", "")))
        track.boxes[int(rec["frame"])] = tuple(_floats(rec["box"]))
    return {v: [t[k] for k in sorted(t)] for v, t in tracks.items()}


def write_scene(scene: Scene, dets_path: str | Path, gt_path: str | Path) -> None:
    write_jsonl(dets_path, detection_records(scene.video_id, scene.detections))
    write_jsonl(gt_path, gt_records(scene.video_id, scene.gt))


# ------------------------------------------------------------------ trajectories


def trajectory_records(video_id: str, trajectories: Iterable[Trajectory]) -> Iterator[dict]:
    for t in sorted(trajectories, key=lambda t: t.id):
        for m in sorted(t.members, key=lambda m: m.frame):
            yield {"video_id": video_id, "track_id": int(t.id), "frame": int(m.frame), "box": _floats(m.box),
                   "score": float(m.score), "text": m.text}


def read_tracks(path: str | Path) -> dict[str, dict[int, dict[int, tuple]]]:
    """Trajectory or GT file as ``{video_id: {track_id: {frame: box}}}``."""
    out: dict[str, dict[int, dict[int, tuple]]] = defaultdict(lambda: defaultdict(dict))
    for rec in iter_jsonl(path):
        _require(rec, ("video_id", "track_id", "frame", "box"), path)
        out[str(rec["video_id"])][int(rec["track_id"])][int(rec["frame"])] = tuple(_floats(rec["box"]))
    return {v: dict(t) for v, t in out.items()}
