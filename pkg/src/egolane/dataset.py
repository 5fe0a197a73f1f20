"""JSON-lines persistence for tracked, labeled sequences.

One file per scenario. The first line is a header with the scenario config,
the map, the truth lane, the hypotheses and their labels. Every following
line is one frame: raw sensor data, the truth pose and, per hypothesis, the
8 MMQ channels (``null`` when a channel is missing) or ``null`` once the
hypothesis is inactive.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .harness import LabeledSequence
from .sim import N_POINTS, LaneMarkingType, MapModel, ScenarioConfig, SequenceRecord
from .tracker import Hypothesis, TrackerConfig, TrackResult

FORMAT = "egolane-sequence/1"


class DatasetError(ValueError):
    pass


def _num(x: float) -> Optional[float]:
    x = float(x)
    return None if math.isnan(x) else x


def _nan(x) -> float:
    return float("nan") if x is None else float(x)


def _type_name(code: int) -> Optional[str]:
    return None if code < 0 else LaneMarkingType(int(code)).name.lower()


def _type_code(name: Optional[str]) -> int:
    return -1 if name is None else int(LaneMarkingType[name.upper()])


def sequence_lines(ls: LabeledSequence, tracker: TrackerConfig = TrackerConfig()) -> Iterable[str]:
    seq, track = ls.sequence, ls.track
    header = {
        "format": FORMAT,
        "scenario_id": int(seq.scenario_id),
        "config": seq.config.to_dict(),
        "map": seq.map.to_dict(),
        "truth": {"lane": int(seq.truth_lane)},
        "tracker": asdict(tracker),
        "hypotheses": [
            {"id": h.id, "lane_index": h.lane_index, "state": [float(v) for v in h.state],
             "covariance": [[float(v) for v in row] for row in h.covariance],
             "length": int(n), "label": bool(ls.labels[h.id])}
            for h, n in zip(track.hypotheses, track.lengths)
        ],
        "valid": bool(ls.valid),
        "n_frames": len(seq),
    }
    yield json.dumps(header)
    for i in range(len(seq)):
        frame = {
            "t": i,
            "truth_pose": [float(v) for v in seq.truth_pose[i]],
            "gnss": [float(v) for v in seq.gnss[i]],
            "odometry": [float(v) for v in seq.odometry[i]],
            "points": [None if np.isnan(row).any() else [float(v) for v in row] for row in seq.points[i]],
            "types": [_type_name(c) for c in seq.types[i]],
            "mmq": [[_num(v) for v in series[i]] if i < len(series) else None for series in track.mmq],
            "lateral": [_num(lat[i]) if i < len(lat) else None for lat in track.lateral],
        }
        yield json.dumps(frame)


def save_sequence(path, ls: LabeledSequence, tracker: TrackerConfig = TrackerConfig()) -> None:
    with open(path, "w") as fh:
        for line in sequence_lines(ls, tracker):
            fh.write(line + "\n")


def load_sequence(path) -> LabeledSequence:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
        frames = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from exc
    if header.get("format") != FORMAT:
        raise DatasetError(f"{path}: unsupported format {header.get('format')!r}")
    if len(frames) != header["n_frames"]:
        raise DatasetError(f"{path}: expected {header['n_frames']} frames, found {len(frames)}")

    L = len(frames)
    points = np.full((L, 4, N_POINTS), np.nan)
    for i, f in enumerate(frames):
        for c, row in enumerate(f["points"]):
            if row is not None:
                points[i, c] = row
    seq = SequenceRecord(
        scenario_id=int(header["scenario_id"]),
        config=ScenarioConfig.from_dict(header["config"]),
        map=MapModel.from_dict(header["map"]),
        truth_lane=int(header["truth"]["lane"]),
        truth_pose=np.array([f["truth_pose"] for f in frames], dtype=float).reshape(L, 3),
        points=points,
        types=np.array([[_type_code(t) for t in f["types"]] for f in frames], dtype=int).reshape(L, 4),
        gnss=np.array([f["gnss"] for f in frames], dtype=float).reshape(L, 2),
        odometry=np.array([f["odometry"] for f in frames], dtype=float).reshape(L, 2),
    )

    hyps, mmq, lateral, lengths, labels = [], [], [], [], {}
    for j, h in enumerate(header["hypotheses"]):
        n = int(h["length"])
        hyps.append(Hypothesis(int(h["id"]), int(h["lane_index"]), np.array(h["state"], dtype=float),
                               np.array(h["covariance"], dtype=float)))
        series = np.full((n, 8), np.nan)
        lat = np.full(n, np.nan)
        for i in range(n):
            row = frames[i]["mmq"][j]
            if row is None:
                raise DatasetError(f"{path}: hypothesis {h['id']} has no MMQ at frame {i}")
            series[i] = [_nan(v) for v in row]
            lat[i] = _nan(frames[i]["lateral"][j])
        mmq.append(series)
        lateral.append(lat)
        lengths.append(n)
        labels[int(h["id"])] = bool(h["label"])
    track = TrackResult(hyps, mmq, lateral, lengths)
    return LabeledSequence(seq, track, labels, bool(header["valid"]))


def save_dataset(directory, dataset: Iterable[LabeledSequence],
                 tracker: TrackerConfig = TrackerConfig()) -> list:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ls in dataset:
        path = out / f"scenario_{ls.scenario_id:08d}.jsonl"
        save_sequence(path, ls, tracker)
        paths.append(path)
    return paths


def load_dataset(directory) -> list:
    """Every ``*.jsonl`` file under ``directory``, ordered by scenario id."""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    files = sorted(root.glob("*.jsonl"))
    if not files:
        raise DatasetError(f"{directory}: no .jsonl scenario files")
    return sorted((load_sequence(p) for p in files), key=lambda ls: ls.scenario_id)
