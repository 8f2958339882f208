"""Concatenated per-dialogue audio timelines.

A dialogue timeline models the audio the cutting adapter will physically
concatenate: the utterance clips in chronological order, overlaps truncated
off the later clip's head, inter-utterance gaps shrunk to capped silence
blocks, and over-long clips capped. Global timeline time maps back to
per-clip source offsets for span extraction.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

from .schema import Dialogue

SILENCE_CAP_MS = 250
UTTERANCE_CAP_MS = 45_000

KIND_UTTERANCE = "utterance"
KIND_SILENCE = "silence"


@dataclass(frozen=True)
class AdjustedCut:
    """An utterance's episode-time interval after overlap truncation."""

    utterance_id: int
    start_ms: int
    end_ms: int
    original_start_ms: int
    degenerate: bool = False


@dataclass(frozen=True)
class TimelineSegment:
    kind: str
    utterance_id: int | None
    source_start_ms: int
    source_end_ms: int
    global_start_ms: int
    global_end_ms: int

    @property
    def length_ms(self) -> int:
        return self.global_end_ms - self.global_start_ms


@dataclass(frozen=True)
class Piece:
    """A slice of one source clip (or inserted silence) covering part of a span."""

    source_utterance_id: int | None  # None = silence insertion
    start_ms: int
    end_ms: int


@dataclass
class DialogueTimeline:
    split: str
    dialogue_id: int
    segments: list[TimelineSegment]
    total_ms: int
    degenerate: list[int] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, int]:
        return (self.split, self.dialogue_id)

    def utterance_segments(self) -> list[TimelineSegment]:
        return [s for s in self.segments if s.kind == KIND_UTTERANCE]

    def utterance_order(self) -> list[int]:
        return [s.utterance_id for s in self.segments if s.kind == KIND_UTTERANCE]

    def locate(self, global_ms: int) -> tuple[int, int | None, int]:
        """Map a global time to (segment index, utterance_id or None, source offset).

        Segments are half-open, so a time on a boundary belongs to the later
        segment.
        """
        if not 0 <= global_ms < self.total_ms:
            raise ValueError(f"global time {global_ms} outside [0, {self.total_ms})")
        starts = [s.global_start_ms for s in self.segments]
        idx = bisect_right(starts, global_ms) - 1
        seg = self.segments[idx]
        offset = seg.source_start_ms + (global_ms - seg.global_start_ms)
        return idx, seg.utterance_id, offset

    def pieces(self, global_start_ms: int, global_end_ms: int) -> list[Piece]:
        """Decompose a global span into per-source-clip slices for an EDL row."""
        if global_start_ms >= global_end_ms:
            return []
        if global_start_ms < 0 or global_end_ms > self.total_ms:
            raise ValueError(
                f"span [{global_start_ms}, {global_end_ms}) outside [0, {self.total_ms})"
            )
        out = []
        for seg in self.segments:
            lo = max(global_start_ms, seg.global_start_ms)
            hi = min(global_end_ms, seg.global_end_ms)
            if lo >= hi:
                continue
            src_lo = seg.source_start_ms + (lo - seg.global_start_ms)
            out.append(Piece(seg.utterance_id, src_lo, src_lo + (hi - lo)))
        return out

    def to_json_dict(self) -> dict:
        return {
            "split": self.split,
            "dialogue_id": self.dialogue_id,
            "total_ms": self.total_ms,
            "degenerate": list(self.degenerate),
            "segments": [
                {
                    "kind": s.kind,
                    "utterance_id": s.utterance_id,
                    "source_start_ms": s.source_start_ms,
                    "source_end_ms": s.source_end_ms,
                    "global_start_ms": s.global_start_ms,
                    "global_end_ms": s.global_end_ms,
                }
                for s in self.segments
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DialogueTimeline":
        segments = [
            TimelineSegment(
                kind=s["kind"],
                utterance_id=s["utterance_id"],
                source_start_ms=s["source_start_ms"],
                source_end_ms=s["source_end_ms"],
                global_start_ms=s["global_start_ms"],
                global_end_ms=s["global_end_ms"],
            )
            for s in d["segments"]
        ]
        return cls(d["split"], d["dialogue_id"], segments, d["total_ms"], list(d["degenerate"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DialogueTimeline":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def resolve_overlaps(dialogue: Dialogue) -> list[AdjustedCut]:
    """Truncate the later utterance's head wherever consecutive cuts overlap.

    Runs left to right in one pass; an utterance fully swallowed by its
    predecessors comes back flagged degenerate rather than silently dropped.
    """
    cuts: list[AdjustedCut] = []
    prev_end: int | None = None
    for utt in dialogue.utterances:
        start, end = utt.start_ms, utt.end_ms
        if prev_end is not None and start < prev_end:
            start = prev_end
        degenerate = start >= end
        cuts.append(AdjustedCut(utt.utterance_id, start, end, utt.start_ms, degenerate))
        if not degenerate:
            prev_end = end
    return cuts


def silence_length(gap_ms: int) -> int:
    """Length of the silence block standing in for an inter-utterance gap."""
    if gap_ms < 0:
        raise ValueError(f"negative gap: {gap_ms}")
    return min(gap_ms, SILENCE_CAP_MS)


def cap_utterance(seg_source_len_ms: int) -> int:
    """Cap a source clip's contribution; truncation keeps the clip head."""
    if seg_source_len_ms < 0:
        raise ValueError(f"negative length: {seg_source_len_ms}")
    return min(seg_source_len_ms, UTTERANCE_CAP_MS)


def build_timeline(dialogue: Dialogue) -> DialogueTimeline:
    segments: list[TimelineSegment] = []
    degenerate: list[int] = []
    cursor = 0
    prev_end: int | None = None
    for cut in resolve_overlaps(dialogue):
        if cut.degenerate:
            degenerate.append(cut.utterance_id)
            continue
        if prev_end is not None:
            sil = silence_length(cut.start_ms - prev_end)
            if sil > 0:
                segments.append(
                    TimelineSegment(KIND_SILENCE, None, 0, sil, cursor, cursor + sil)
                )
                cursor += sil
        length = cap_utterance(cut.end_ms - cut.start_ms)
        src_start = cut.start_ms - cut.original_start_ms
        segments.append(
            TimelineSegment(
                KIND_UTTERANCE,
                cut.utterance_id,
                src_start,
                src_start + length,
                cursor,
                cursor + length,
            )
        )
        cursor += length
        # Gaps are measured between adjusted episode timestamps, not capped ends.
        prev_end = cut.end_ms
    return DialogueTimeline(dialogue.split, dialogue.dialogue_id, segments, cursor, degenerate)


def locate(timeline: DialogueTimeline, global_ms: int) -> tuple[int, int | None, int]:
    return timeline.locate(global_ms)
