"""End-to-end orchestration: realignment, speaker localisation, manifest, stats.

Stage boundaries are files (posterior matrices, detection/score/cut streams,
EDLs, the manifest), so the model adapters and this core compose through
documented formats and every stage can be driven from synthetic fixtures.
Dialogues and videos are independent work items; all per-item processing is
pure, and outputs are assembled in key order so runs are byte-reproducible
regardless of worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asd import (
    DEFAULT_EXACT_GROUP_LIMIT,
    ActiveSpeakerResult,
    TrackScores,
    assemble_active_speaker,
    detect_conflicts,
    infer_cuts,
    resolve_group,
    speaking_mask,
    split_tracks_at_cuts,
)
from .ctcseg import (
    DEFAULT_MIN_CONFIDENCE,
    DEFAULT_MIN_SPAN_MS,
    STATUS_ALIGNED,
    STATUS_DEGENERATE,
    InfeasibleAlignmentError,
    PosteriorMatrix,
    expand_with_blanks,
    filter_spans,
    utterance_spans,
    viterbi_align,
)
from .schema import EMOTIONS, Dialogue, UtteranceRecord, group_dialogues
from .timeline import DialogueTimeline, Piece, build_timeline
from .tracks import DEFAULT_THETA, FaceTrack, TrackEntry, link_detections
from .transcript import EmptyTranscriptError, concat_transcripts

STATUS_NO_ACTIVE_SPEAKER = "no_active_speaker"

MANIFEST_STATUSES = (
    STATUS_ALIGNED,
    "dropped_short",
    "dropped_low_confidence",
    STATUS_DEGENERATE,
    STATUS_NO_ACTIVE_SPEAKER,
)

MAIN_SPEAKERS = ("Rachel", "Monica", "Phoebe", "Joey", "Chandler", "Ross")


class ValidationError(ValueError):
    """Inconsistent inputs across stage files (lengths, ids, vocabularies)."""


@dataclass
class RunConfig:
    theta: float = DEFAULT_THETA
    min_span_ms: int = DEFAULT_MIN_SPAN_MS
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    cut_fallback: bool = True
    exact_group_limit: int = DEFAULT_EXACT_GROUP_LIMIT

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.min_span_ms < 0:
            raise ValueError(f"min_span_ms must be >= 0, got {self.min_span_ms}")
        if self.exact_group_limit < 0:
            raise ValueError("exact_group_limit must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta,
            "min_span_ms": self.min_span_ms,
            "min_confidence": self.min_confidence,
            "cut_fallback": self.cut_fallback,
            "exact_group_limit": self.exact_group_limit,
        }


def audio_ref(split: str, dialogue_id: int, utterance_id: int) -> str:
    return f"{split}/{dialogue_id}/{utterance_id}/audio.wav"


def face_dir_ref(split: str, dialogue_id: int, utterance_id: int) -> str:
    return f"{split}/{dialogue_id}/{utterance_id}/"


def crop_ref(split: str, dialogue_id: int, utterance_id: int, frame: int) -> str:
    return f"{split}/{dialogue_id}/{utterance_id}/{frame:06d}.png"


# ---------------------------------------------------------------------------
# Realignment


@dataclass
class EdlRow:
    split: str
    dialogue_id: int
    utterance_id: int
    status: str
    global_start_ms: int | None = None
    global_end_ms: int | None = None
    confidence: float | None = None
    pieces: list[Piece] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.split, self.dialogue_id, self.utterance_id)

    def to_json_dict(self) -> dict:
        return {
            "split": self.split,
            "dialogue_id": self.dialogue_id,
            "utterance_id": self.utterance_id,
            "status": self.status,
            "global_start_ms": self.global_start_ms,
            "global_end_ms": self.global_end_ms,
            "confidence": self.confidence,
            "pieces": [
                {
                    "source_utterance_id": p.source_utterance_id,
                    "start_ms": p.start_ms,
                    "end_ms": p.end_ms,
                }
                for p in self.pieces
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EdlRow":
        return cls(
            d["split"],
            d["dialogue_id"],
            d["utterance_id"],
            d["status"],
            d["global_start_ms"],
            d["global_end_ms"],
            d["confidence"],
            [
                Piece(p["source_utterance_id"], p["start_ms"], p["end_ms"])
                for p in d["pieces"]
            ],
        )


@dataclass
class DialogueNote:
    key: tuple[str, int]
    status: str  # ok | missing_posterior | empty_transcript | infeasible
    detail: str = ""
    degenerate: list[int] = field(default_factory=list)
    dropped_chars: int = 0


@dataclass
class RealignResult:
    rows: list[EdlRow]
    timelines: dict[tuple[str, int], DialogueTimeline]
    notes: list[DialogueNote]

    @property
    def fatal(self) -> bool:
        return any(n.status not in ("ok",) for n in self.notes)


def realign_dialogue(
    dialogue: Dialogue,
    posterior: PosteriorMatrix | None,
    config: RunConfig,
) -> tuple[DialogueTimeline, list[EdlRow], DialogueNote]:
    """Timeline -> transcript -> CTC alignment -> EDL rows for one dialogue.

    Failures that prevent any alignment (missing posteriors, empty
    transcript, infeasible frame budget) degrade every utterance to
    `degenerate` and are recorded on the note; they never raise.
    """
    tl = build_timeline(dialogue)
    note = DialogueNote(dialogue.key, "ok", degenerate=list(tl.degenerate))
    texts_by_id = {u.utterance_id: u.text for u in dialogue.utterances}

    spans_by_id: dict[int, tuple] = {}
    empty_ids: set[int] = set(tl.degenerate)

    if posterior is None:
        note.status = "missing_posterior"
        note.detail = "no posterior matrix for this dialogue"
    else:
        try:
            ct = concat_transcripts(
                [(uid, texts_by_id[uid]) for uid in tl.utterance_order()],
                posterior.vocab,
            )
            note.dropped_chars = len(ct.dropped)
            empty_ids.update(ct.empty_utterances)
            expanded = expand_with_blanks(ct.chars, posterior.vocab.blank_index)
            align = viterbi_align(posterior, expanded, posterior.vocab.blank_index)
            spans = utterance_spans(align, ct.bounds, posterior.frame_duration_ms)
            spans = filter_spans(spans, config.min_span_ms, config.min_confidence)
            spans_by_id = {s.utterance_id: s for s in spans}
        except EmptyTranscriptError as exc:
            note.status = "empty_transcript"
            note.detail = str(exc)
        except InfeasibleAlignmentError as exc:
            note.status = "infeasible"
            note.detail = str(exc)

    rows = []
    for utt in dialogue.utterances:
        span = spans_by_id.get(utt.utterance_id)
        if span is None:
            rows.append(
                EdlRow(dialogue.split, dialogue.dialogue_id, utt.utterance_id, STATUS_DEGENERATE)
            )
            continue
        g0 = max(span.global_start_ms, 0)
        g1 = min(span.global_end_ms, tl.total_ms)
        pieces = tl.pieces(g0, g1) if span.status == STATUS_ALIGNED else []
        rows.append(
            EdlRow(
                dialogue.split,
                dialogue.dialogue_id,
                utt.utterance_id,
                span.status,
                g0,
                g1,
                span.confidence,
                pieces,
            )
        )
    return tl, rows, note


def _realign_one(args):
    dialogue, posterior, config = args
    return realign_dialogue(dialogue, posterior, config)


def realign(
    records: list[UtteranceRecord],
    posteriors,
    config: RunConfig,
    workers: int = 1,
) -> RealignResult:
    """Realign every dialogue found in `records`.

    `posteriors` maps (split, dialogue_id) to a PosteriorMatrix, either as a
    mapping or as a callable returning None when absent. Dialogues are
    independent work items; results are assembled in key order, so the output
    does not depend on `workers`.
    """
    dialogues = group_dialogues(records)

    def lookup(key):
        if callable(posteriors):
            return posteriors(key)
        return posteriors.get(key)

    jobs = [(d, lookup(d.key), config) for d in dialogues]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_realign_one, jobs))
    else:
        outcomes = [_realign_one(j) for j in jobs]

    rows: list[EdlRow] = []
    timelines: dict[tuple[str, int], DialogueTimeline] = {}
    notes: list[DialogueNote] = []
    for tl, dialogue_rows, note in outcomes:
        rows.extend(dialogue_rows)
        timelines[tl.key] = tl
        notes.append(note)
    rows.sort(key=lambda r: r.key)
    return RealignResult(rows, timelines, notes)


def write_edl_jsonl(path: str | Path, rows: list[EdlRow]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row.to_json_dict(), sort_keys=True) + "\n")


def read_edl_jsonl(path: str | Path) -> list[EdlRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(EdlRow.from_json_dict(json.loads(line)))
    return rows


# ---------------------------------------------------------------------------
# Speaker localisation


@dataclass
class LocaliseResult:
    key: tuple[str, int, int]
    status: str  # aligned | no_active_speaker
    result: ActiveSpeakerResult | None
    tracks: list[FaceTrack]
    cuts: list[tuple[int, int]]

    def to_json_dict(self) -> dict:
        d = {
            "split": self.key[0],
            "dialogue_id": self.key[1],
            "utterance_id": self.key[2],
            "status": self.status,
            "retained": self.result.retained if self.result else [],
            "faces": [],
        }
        if self.result:
            d["faces"] = [
                {
                    "frame": fr.frame,
                    **fr.box.to_json_dict(),
                    "crop": fr.crop,
                    "track_id": fr.track_id,
                    "speaking": fr.speaking,
                }
                for fr in self.result.faces
            ]
        return d


def prepare_tracks(
    key: tuple[str, int, int],
    per_frame,
    cuts,
    config: RunConfig,
) -> tuple[list[FaceTrack], list[tuple[int, int]]]:
    """Link detections, settle camera cuts, split, re-id, set crop references.

    This is the deterministic track list the scoring adapter consumes; the
    full localisation pass recomputes it identically from the same inputs.
    """
    split, dialogue_id, utterance_id = key
    n_frames = len(per_frame)
    raw = link_detections(per_frame, config.theta)
    if cuts is None:
        if config.cut_fallback and raw:
            cuts = infer_cuts(raw, n_frames)
        else:
            cuts = [(0, max(n_frames, 1))]
    cuts = sorted((int(s), int(e)) for s, e in cuts)
    tracks = split_tracks_at_cuts(raw, cuts)
    for t in tracks:
        t.entries = [
            TrackEntry(e.frame, e.box, crop_ref(split, dialogue_id, utterance_id, e.frame))
            for e in t.entries
        ]
    return tracks, cuts


def localise(
    key: tuple[str, int, int],
    per_frame,
    scores: dict[int, dict[int, np.ndarray]],
    cuts,
    config: RunConfig,
) -> LocaliseResult:
    """Tracks -> fusion -> conflict groups -> resolution -> face assembly."""
    tracks, cuts = prepare_tracks(key, per_frame, cuts, config)
    if not tracks:
        return LocaliseResult(key, STATUS_NO_ACTIVE_SPEAKER, None, [], cuts)

    fused: dict[int, np.ndarray] = {}
    masks: dict[int, np.ndarray] = {}
    for t in tracks:
        per_phi = scores.get(t.track_id)
        if not per_phi:
            raise ValidationError(f"track {t.track_id}: no scores supplied")
        ts = TrackScores.from_per_phi(t.track_id, per_phi)
        if ts.fused.shape[0] != len(t):
            raise ValidationError(
                f"track {t.track_id}: {ts.fused.shape[0]} scores for {len(t)} entries"
            )
        fused[t.track_id] = ts.fused
        masks[t.track_id] = speaking_mask(ts.fused)

    speaking_tracks = [t for t in tracks if bool(masks[t.track_id].any())]
    if not speaking_tracks:
        return LocaliseResult(key, STATUS_NO_ACTIVE_SPEAKER, None, tracks, cuts)

    counts = {t.track_id: int(masks[t.track_id].sum()) for t in tracks}
    eliminated: set[int] = set()
    for group in detect_conflicts(tracks, masks):
        keep = resolve_group(group, counts, config.exact_group_limit)
        eliminated.update(set(group.members) - set(keep))

    retained = [t for t in speaking_tracks if t.track_id not in eliminated]
    if not retained:
        return LocaliseResult(key, STATUS_NO_ACTIVE_SPEAKER, None, tracks, cuts)
    result = assemble_active_speaker(retained, fused)
    return LocaliseResult(key, STATUS_ALIGNED, result, tracks, cuts)


def write_localise_json(path: str | Path, result: LocaliseResult) -> None:
    Path(path).write_text(
        json.dumps(result.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    dialogue_id: int
    utterance_id: int
    status: str
    realigned_start_ms: int | None
    realigned_end_ms: int | None
    audio_ref: str | None
    face_ref: str | None
    face_count: int
    emotion: str
    speaker: str

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.split, self.dialogue_id, self.utterance_id)

    def to_json_dict(self) -> dict:
        return {
            "split": self.split,
            "dialogue_id": self.dialogue_id,
            "utterance_id": self.utterance_id,
            "status": self.status,
            "realigned_start_ms": self.realigned_start_ms,
            "realigned_end_ms": self.realigned_end_ms,
            "audio_ref": self.audio_ref,
            "face_ref": self.face_ref,
            "face_count": self.face_count,
            "emotion": self.emotion,
            "speaker": self.speaker,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            d["split"],
            d["dialogue_id"],
            d["utterance_id"],
            d["status"],
            d["realigned_start_ms"],
            d["realigned_end_ms"],
            d["audio_ref"],
            d["face_ref"],
            d["face_count"],
            d["emotion"],
            d["speaker"],
        )


def build_manifest(
    records: list[UtteranceRecord],
    edl_rows: list[EdlRow],
    localise_results: dict[tuple[str, int, int], LocaliseResult],
) -> list[ManifestEntry]:
    """One entry per input record, combining realignment and localisation."""
    by_key = {}
    for row in edl_rows:
        if row.key in by_key:
            raise ValidationError(f"duplicate EDL row for {row.key}")
        by_key[row.key] = row

    entries = []
    for record in sorted(records, key=lambda r: r.key):
        row = by_key.get(record.key)
        if row is None:
            raise ValidationError(f"no EDL row for record {record.key}")
        status = row.status
        audio = face = None
        face_count = 0
        if row.status == STATUS_ALIGNED:
            lr = localise_results.get(record.key)
            if lr is None:
                raise ValidationError(f"no localisation result for aligned {record.key}")
            audio = audio_ref(*record.key)
            if lr.status == STATUS_ALIGNED and lr.result and lr.result.faces:
                face = face_dir_ref(*record.key)
                face_count = len(lr.result.faces)
            else:
                status = STATUS_NO_ACTIVE_SPEAKER
        entries.append(
            ManifestEntry(
                record.split,
                record.dialogue_id,
                record.utterance_id,
                status,
                row.global_start_ms,
                row.global_end_ms,
                audio,
                face,
                face_count,
                record.emotion,
                record.speaker,
            )
        )
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in sorted(entries, key=lambda e: e.key):
            f.write(json.dumps(e.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(ManifestEntry.from_json_dict(json.loads(line)))
    return entries


def write_run_meta(path: str | Path, config: RunConfig) -> None:
    meta = {"tool": "meldrefine", "version": __version__, "config": config.to_json_dict()}
    Path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class StatsReport:
    splits: list[str]
    emotion_table: dict[str, dict[str, tuple[int, int]]]
    speaker_table: dict[str, dict[str, tuple[int, int]]]
    retention: dict[str, tuple[int, int]]
    overall: tuple[int, int]
    dialogue_loss: dict[str, tuple[int, int]]

    @staticmethod
    def _pct(part: int, whole: int) -> float:
        return 100.0 * part / whole if whole else 0.0

    def render_text(self) -> str:
        lines = []
        width = max(len(s) for s in self.splits + ["Total"]) + 14

        def table(title, rows):
            lines.append(title)
            header = "".rjust(16) + "".join(s.rjust(width) for s in self.splits + ["Total"])
            lines.append(header)
            for label, by_split in rows.items():
                cells = []
                tot_r = tot_o = 0
                for s in self.splits:
                    r, o = by_split.get(s, (0, 0))
                    tot_r += r
                    tot_o += o
                    cells.append(f"{r} ({o})".rjust(width))
                cells.append(f"{tot_r} ({tot_o})".rjust(width))
                lines.append(label.rjust(16) + "".join(cells))
            lines.append("")

        table("Retained records by emotion (original in parentheses)", self.emotion_table)
        table("Retained records by speaker (original in parentheses)", self.speaker_table)
        for s in self.splits:
            r, o = self.retention[s]
            lines.append(f"retention {s}: {r}/{o} ({self._pct(r, o):.2f}%)")
        r, o = self.overall
        lines.append(f"retention overall: {r}/{o} ({self._pct(r, o):.2f}%)")
        for s in self.splits:
            lost, total = self.dialogue_loss[s]
            lines.append(
                f"dialogues with loss {s}: {lost}/{total} ({self._pct(lost, total):.1f}%)"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "splits": self.splits,
            "emotion": {
                e: {s: list(v) for s, v in by_split.items()}
                for e, by_split in self.emotion_table.items()
            },
            "speaker": {
                sp: {s: list(v) for s, v in by_split.items()}
                for sp, by_split in self.speaker_table.items()
            },
            "retention": {s: list(v) for s, v in self.retention.items()},
            "overall": list(self.overall),
            "dialogue_loss": {s: list(v) for s, v in self.dialogue_loss.items()},
        }


def stats(entries: list[ManifestEntry]) -> StatsReport:
    """Retention distributions over a manifest.

    `retained` means a fully aligned entry (audio and face references
    present). Speakers outside the six recurring main characters are pooled
    under "others", matching how MELD-style speaker tables are reported.
    """
    split_order = {"train": 0, "dev": 1, "test": 2}
    splits = sorted({e.split for e in entries}, key=lambda s: split_order.get(s, 99))

    def bucket():
        return {}

    emotion_table = {e: bucket() for e in EMOTIONS}
    speaker_table = {s: bucket() for s in MAIN_SPEAKERS}
    speaker_table["others"] = bucket()
    retention = {s: [0, 0] for s in splits}
    dialogues: dict[tuple[str, int], bool] = {}

    def bump(table, label, split, retained):
        r, o = table[label].get(split, (0, 0))
        table[label][split] = (r + (1 if retained else 0), o + 1)

    for e in entries:
        retained = e.status == STATUS_ALIGNED
        bump(emotion_table, e.emotion, e.split, retained)
        speaker = e.speaker if e.speaker in MAIN_SPEAKERS else "others"
        bump(speaker_table, speaker, e.split, retained)
        retention[e.split][1] += 1
        if retained:
            retention[e.split][0] += 1
        dkey = (e.split, e.dialogue_id)
        dialogues[dkey] = dialogues.get(dkey, False) or not retained

    dialogue_loss = {}
    for s in splits:
        keys = [k for k in dialogues if k[0] == s]
        dialogue_loss[s] = (sum(1 for k in keys if dialogues[k]), len(keys))

    overall = (sum(v[0] for v in retention.values()), sum(v[1] for v in retention.values()))
    return StatsReport(
        splits,
        emotion_table,
        speaker_table,
        {s: tuple(v) for s, v in retention.items()},
        overall,
        dialogue_loss,
    )
