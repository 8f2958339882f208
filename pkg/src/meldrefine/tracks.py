"""Face tracklet linking by IoU-threshold association across consecutive frames.

Candidate pairs between a frame's detections and the tracks still open from
the previous frame are matched greedily in descending IoU order; anything
unmatched opens a new track, and a track ends on the first frame without a
qualifying match (no gap tolerance). Final track ids are assigned by first
frame, ties broken by the leftmost first box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DEFAULT_THETA = 0.33


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box has non-positive area: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_json_dict(self) -> dict:
        return {"x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}


@dataclass(frozen=True)
class FaceDetection:
    frame: int
    box: Box
    confidence: float = 1.0


@dataclass(frozen=True)
class TrackEntry:
    frame: int
    box: Box
    crop: str | None = None


@dataclass
class FaceTrack:
    track_id: int
    entries: list[TrackEntry]
    cut_id: int = -1

    @property
    def first_frame(self) -> int:
        return self.entries[0].frame

    @property
    def last_frame(self) -> int:
        return self.entries[-1].frame

    def frame_set(self) -> set[int]:
        return {e.frame for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area, in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def link_detections(per_frame, theta: float = DEFAULT_THETA) -> list[FaceTrack]:
    """Link per-frame detections into tracks; positions index the frame axis.

    `per_frame[f]` holds frame f's detections (possibly empty). Matching per
    consecutive frame pair is greedy over descending IoU among pairs above
    theta, each face used at most once. Deterministic: IoU ties fall back to
    the open-track order, then the detection order.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must be in (0, 1), got {theta}")

    chains: list[list[TrackEntry]] = []
    open_chains: list[int] = []  # indices into chains with last frame == f-1
    for f, detections in enumerate(per_frame):
        candidates = []
        for oi, ci in enumerate(open_chains):
            last_box = chains[ci][-1].box
            for di, det in enumerate(detections):
                v = iou(last_box, det.box)
                if v > theta:
                    candidates.append((-v, oi, di))
        candidates.sort()
        matched_open: dict[int, int] = {}
        matched_det: set[int] = set()
        for neg_v, oi, di in candidates:
            if oi in matched_open or di in matched_det:
                continue
            matched_open[oi] = di
            matched_det.add(di)
        next_open: list[int] = []
        for oi, ci in enumerate(open_chains):
            if oi in matched_open:
                det = detections[matched_open[oi]]
                chains[ci].append(TrackEntry(f, det.box))
                next_open.append(ci)
        for di, det in enumerate(detections):
            if di not in matched_det:
                chains.append([TrackEntry(f, det.box)])
                next_open.append(len(chains) - 1)
        open_chains = next_open

    order = sorted(
        range(len(chains)),
        key=lambda ci: (chains[ci][0].frame, chains[ci][0].box.x1, chains[ci][0].box.y1, ci),
    )
    return [FaceTrack(track_id, chains[ci]) for track_id, ci in enumerate(order)]


def read_detections_jsonl(path: str | Path) -> list[list[FaceDetection]]:
    """Load {"frame": int, "boxes": [...]} lines into a dense per-frame list."""
    by_frame: dict[int, list[FaceDetection]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            frame = int(obj["frame"])
            if frame < 0:
                raise ValueError(f"{path}:{line_no}: negative frame index {frame}")
            if frame in by_frame:
                raise ValueError(f"{path}:{line_no}: duplicate frame {frame}")
            by_frame[frame] = [
                FaceDetection(
                    frame,
                    Box(float(b["x1"]), float(b["y1"]), float(b["x2"]), float(b["y2"])),
                    float(b.get("conf", 1.0)),
                )
                for b in obj["boxes"]
            ]
    if not by_frame:
        return []
    n = max(by_frame) + 1
    return [by_frame.get(f, []) for f in range(n)]


def write_detections_jsonl(path: str | Path, per_frame) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for frame, detections in enumerate(per_frame):
            obj = {
                "frame": frame,
                "boxes": [
                    {**d.box.to_json_dict(), "conf": d.confidence} for d in detections
                ],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def read_tracks_jsonl(path: str | Path) -> list[FaceTrack]:
    tracks = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entries = [
                TrackEntry(
                    int(e["frame"]),
                    Box(float(e["x1"]), float(e["y1"]), float(e["x2"]), float(e["y2"])),
                    e.get("crop"),
                )
                for e in obj["entries"]
            ]
            tracks.append(FaceTrack(int(obj["track_id"]), entries, int(obj.get("cut_id", -1))))
    return tracks


def write_tracks_jsonl(path: str | Path, tracks: list[FaceTrack]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in tracks:
            obj = {
                "track_id": t.track_id,
                "cut_id": t.cut_id,
                "entries": [
                    {"frame": e.frame, **e.box.to_json_dict(), "crop": e.crop}
                    for e in t.entries
                ],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")
