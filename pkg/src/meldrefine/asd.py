"""Speaking-score fusion, camera-cut conflict grouping, and speaker assembly.

Per-track scores arrive in blocks of several window sizes; fusing them is a
plain per-frame arithmetic mean, and a strictly positive fused score marks
the frame as speaking. Two tracks conflict when they share a frame and both
show speaking activity anywhere; conflicts are grouped per camera cut and
resolved by exact subset search under the lexicographic objective
(no conflicts, most speaking faces, fewest tracks, smallest id tuple).
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .tracks import Box, FaceTrack, TrackEntry

PHI_VALUES = (25, 50, 75, 100, 125, 150)
DEFAULT_EXACT_GROUP_LIMIT = 20


@dataclass
class TrackScores:
    track_id: int
    per_phi: dict[int, np.ndarray]
    fused: np.ndarray

    @classmethod
    def from_per_phi(cls, track_id: int, per_phi: dict) -> "TrackScores":
        return cls(track_id, {int(k): np.asarray(v, dtype=np.float64) for k, v in per_phi.items()}, fuse_scores(per_phi))


@dataclass(frozen=True)
class CutGroup:
    cut_id: int
    members: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class FaceRef:
    frame: int
    box: Box
    crop: str | None
    track_id: int
    speaking: bool


@dataclass
class ActiveSpeakerResult:
    retained: list[int]
    faces: list[FaceRef]

    def speaking_flags(self) -> list[bool]:
        return [f.speaking for f in self.faces]


def fuse_scores(per_phi) -> np.ndarray:
    """Element-wise arithmetic mean over the block sizes present.

    All arrays must share the track's length; NaN entries mark frames a block
    did not cover and are excluded from that frame's mean.
    """
    if not per_phi:
        raise ValueError("no block scores to fuse")
    arrays = [np.asarray(per_phi[k], dtype=np.float64) for k in sorted(per_phi)]
    n = arrays[0].shape[0]
    for k, a in zip(sorted(per_phi), arrays):
        if a.ndim != 1 or a.shape[0] != n:
            raise ValueError(f"phi={k} score array has length {a.shape}, expected ({n},)")
    stacked = np.stack(arrays)
    mask = ~np.isnan(stacked)
    counts = mask.sum(axis=0)
    if (counts == 0).any():
        raise ValueError("some frames have no score under any block size")
    return np.where(mask, stacked, 0.0).sum(axis=0) / counts


def speaking_mask(fused) -> np.ndarray:
    """Strictly positive fused scores mark speaking frames; 0 is not speaking."""
    return np.asarray(fused, dtype=np.float64) > 0


def split_tracks_at_cuts(tracks: list[FaceTrack], cuts) -> list[FaceTrack]:
    """Split tracks at camera-cut boundaries and re-assign deterministic ids.

    Cuts are half-open [start_frame, end_frame) intervals; only their starts
    matter for splitting. Ids are re-assigned by (first frame, leftmost first
    box) exactly like the linker does, and cut_id records the containing cut.
    """
    starts = sorted({int(s) for s, _ in cuts}) if cuts else []

    def cut_of(frame: int) -> int:
        return bisect_right(starts, frame) - 1

    parts: list[tuple[int, list[TrackEntry]]] = []
    for track in tracks:
        current: list[TrackEntry] = []
        current_cut = None
        for entry in track.entries:
            c = cut_of(entry.frame)
            if current and c != current_cut:
                parts.append((current_cut, current))
                current = []
            current.append(entry)
            current_cut = c
        if current:
            parts.append((current_cut, current))

    order = sorted(
        range(len(parts)),
        key=lambda i: (parts[i][1][0].frame, parts[i][1][0].box.x1, parts[i][1][0].box.y1, i),
    )
    return [
        FaceTrack(track_id, parts[i][1], cut_id=parts[i][0])
        for track_id, i in enumerate(order)
    ]


def infer_cuts(tracks: list[FaceTrack], n_frames: int) -> list[tuple[int, int]]:
    """Fallback cut inference: a boundary wherever every open track ends.

    Emits a cut start at f+1 whenever some track ends at frame f and no track
    survives from f to f+1.
    """
    if n_frames <= 0:
        return []
    ends = {t.last_frame for t in tracks}
    boundaries = []
    for f in sorted(ends):
        if f + 1 >= n_frames:
            continue
        if any(t.first_frame <= f and t.last_frame >= f + 1 for t in tracks):
            continue
        boundaries.append(f + 1)
    starts = [0] + boundaries
    return [
        (start, boundaries[i] if i < len(boundaries) else n_frames)
        for i, start in enumerate(starts)
    ]


def detect_conflicts(tracks: list[FaceTrack], masks: dict[int, np.ndarray]) -> list[CutGroup]:
    """Conflict groups: connected components of the conflict graph per cut.

    Tracks conflict when they share at least one frame index and each has at
    least one speaking-positive frame. Tracks without any conflict edge are
    not grouped.
    """
    speaking = {t.track_id: bool(np.asarray(masks[t.track_id]).any()) for t in tracks}
    by_cut: dict[int, list[FaceTrack]] = {}
    for t in tracks:
        by_cut.setdefault(t.cut_id, []).append(t)

    groups = []
    for cut_id in sorted(by_cut):
        members = sorted(by_cut[cut_id], key=lambda t: t.track_id)
        frames = {t.track_id: t.frame_set() for t in members}
        edges = [
            (a.track_id, b.track_id)
            for a, b in combinations(members, 2)
            if speaking[a.track_id]
            and speaking[b.track_id]
            and frames[a.track_id] & frames[b.track_id]
        ]
        if not edges:
            continue
        adjacency: dict[int, set[int]] = {}
        for a, b in edges:
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        seen: set[int] = set()
        for root in sorted(adjacency):
            if root in seen:
                continue
            component = []
            stack = [root]
            seen.add(root)
            while stack:
                node = stack.pop()
                component.append(node)
                for nxt in adjacency[node]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            component.sort()
            component_set = set(component)
            group_edges = tuple(e for e in edges if e[0] in component_set)
            groups.append(CutGroup(cut_id, tuple(component), group_edges))
    return groups


def resolve_group(
    group: CutGroup,
    speaking_counts: dict[int, int],
    exact_limit: int = DEFAULT_EXACT_GROUP_LIMIT,
) -> list[int]:
    """Pick the conflict-free member subset to keep.

    Exact search maximises total speaking-positive faces, then minimises the
    number of tracks, then takes the smallest id tuple; beyond `exact_limit`
    members a greedy highest-count-first pass with feasibility checks is used
    instead.
    """
    members = sorted(group.members)
    n = len(members)
    pos = {m: i for i, m in enumerate(members)}
    adjacency = [0] * n
    for a, b in group.edges:
        adjacency[pos[a]] |= 1 << pos[b]
        adjacency[pos[b]] |= 1 << pos[a]

    if n <= exact_limit:
        best_key = None
        best: list[int] = []
        for mask in range(1 << n):
            chosen = [i for i in range(n) if mask >> i & 1]
            if any(adjacency[i] & mask for i in chosen):
                continue
            ids = tuple(members[i] for i in chosen)
            total = sum(speaking_counts[m] for m in ids)
            key = (-total, len(ids), ids)
            if best_key is None or key < best_key:
                best_key = key
                best = list(ids)
        return best

    selected_mask = 0
    selected: list[int] = []
    for i in sorted(range(n), key=lambda i: (-speaking_counts[members[i]], members[i])):
        if adjacency[i] & selected_mask:
            continue
        selected_mask |= 1 << i
        selected.append(members[i])
    return sorted(selected)


def assemble_active_speaker(
    tracks: list[FaceTrack], fused_by_id: dict[int, np.ndarray]
) -> ActiveSpeakerResult:
    """Merge retained tracks into one frame-ordered face sequence.

    At a frame shared by two retained tracks, the positively scored one wins,
    otherwise the higher fused score, then the lower track id.
    """
    best_at: dict[int, tuple] = {}
    for track in sorted(tracks, key=lambda t: t.track_id):
        fused = np.asarray(fused_by_id[track.track_id], dtype=np.float64)
        for i, entry in enumerate(track.entries):
            s = float(fused[i])
            rank = (s > 0, s, -track.track_id)
            incumbent = best_at.get(entry.frame)
            if incumbent is None or rank > incumbent[0]:
                best_at[entry.frame] = (rank, entry, track.track_id, s > 0)
    faces = [
        FaceRef(frame, e.box, e.crop, tid, bool(speaking))
        for frame, (rank, e, tid, speaking) in sorted(best_at.items())
    ]
    return ActiveSpeakerResult(sorted(t.track_id for t in tracks), faces)


def read_scores_jsonl(path: str | Path) -> dict[int, dict[int, np.ndarray]]:
    """Load {"track_id", "phi", "scores"} lines into track_id -> phi -> array."""
    scores: dict[int, dict[int, np.ndarray]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            track_id = int(obj["track_id"])
            phi = int(obj["phi"])
            per_phi = scores.setdefault(track_id, {})
            if phi in per_phi:
                raise ValueError(f"{path}:{line_no}: duplicate scores for track {track_id} phi {phi}")
            per_phi[phi] = np.asarray([float(x) for x in obj["scores"]], dtype=np.float64)
    return scores


def write_scores_jsonl(path: str | Path, scores: dict[int, dict[int, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for track_id in sorted(scores):
            for phi in sorted(scores[track_id]):
                obj = {
                    "track_id": track_id,
                    "phi": phi,
                    "scores": [float(x) for x in scores[track_id][phi]],
                }
                f.write(json.dumps(obj, sort_keys=True) + "\n")


def read_cuts_json(path: str | Path) -> list[tuple[int, int]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(int(c["start_frame"]), int(c["end_frame"])) for c in raw]


def write_cuts_json(path: str | Path, cuts) -> None:
    payload = [{"start_frame": int(s), "end_frame": int(e)} for s, e in cuts]
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
