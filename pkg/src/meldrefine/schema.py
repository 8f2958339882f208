"""MELD-style dataset records: parsing, repair overrides, dialogue grouping."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

SPLITS = ("train", "dev", "test")
EMOTIONS = ("neutral", "joy", "surprise", "sadness", "fear", "anger", "disgust")
SENTIMENTS = ("positive", "negative", "neutral")

REQUIRED_COLUMNS = (
    "Dialogue_ID",
    "Utterance_ID",
    "Speaker",
    "Emotion",
    "Sentiment",
    "Season",
    "Episode",
    "StartTime",
    "EndTime",
    "Utterance",
)

OVERRIDE_ACTIONS = ("reassign_dialogue", "strip_description", "drop", "resort_dialogue")

DEFAULT_OVERRIDES_RESOURCE = "meld_overrides.json"

_TIMESTAMP_RE = re.compile(
    r"^(?P<hours>\d+):(?P<minutes>[0-5]\d):(?P<seconds>[0-5]\d)\.(?P<millis>\d{3})$"
)
_DESCRIPTION_RE = re.compile(r"\([^()]*\)|\[[^\[\]]*\]")
_WS_RE = re.compile(r"\s+")


class TimestampError(ValueError):
    """A clock string that does not match H:MM:SS.mmm; names the bad field."""

    def __init__(self, text: str, field_name: str, message: str):
        super().__init__(f"bad timestamp {text!r}: {field_name}: {message}")
        self.text = text
        self.field_name = field_name


class SchemaError(ValueError):
    """CSV payload is missing required header columns."""


@dataclass(frozen=True)
class UtteranceRecord:
    """One dataset row: a single transcribed utterance of a dialogue."""

    split: str
    dialogue_id: int
    utterance_id: int
    speaker: str
    emotion: str
    sentiment: str
    season: int
    episode: int
    start_ms: int
    end_ms: int
    text: str
    # Ordering hint set by reassign_dialogue; never serialized.
    sort_first: bool = field(default=False, compare=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.split, self.dialogue_id, self.utterance_id)


@dataclass(frozen=True)
class RowError:
    """A skipped CSV data row, 1-based index, with the offending field."""

    row: int
    field: str
    message: str


@dataclass(frozen=True)
class Override:
    split: str
    dialogue_id: int
    utterance_id: int | None  # None only for resort_dialogue
    action: str
    payload: str = ""

    @property
    def key(self) -> tuple[str, int, int | None]:
        return (self.split, self.dialogue_id, self.utterance_id)


@dataclass
class OverrideReport:
    applied: list[tuple[tuple[str, int, int | None], str]] = field(default_factory=list)
    dangling: list[tuple[tuple[str, int, int | None], str]] = field(default_factory=list)


@dataclass
class Dialogue:
    """Utterances of one (split, dialogue_id), chronologically ordered."""

    split: str
    dialogue_id: int
    utterances: list[UtteranceRecord]

    @property
    def key(self) -> tuple[str, int]:
        return (self.split, self.dialogue_id)


def parse_timestamp(text: str) -> int:
    """Convert an "H:MM:SS.mmm" clock string to integer milliseconds."""
    stripped = text.strip()
    m = _TIMESTAMP_RE.match(stripped)
    if m is None:
        raise TimestampError(text, *_diagnose_timestamp(stripped))
    return (
        int(m["hours"]) * 3_600_000
        + int(m["minutes"]) * 60_000
        + int(m["seconds"]) * 1_000
        + int(m["millis"])
    )


def _diagnose_timestamp(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 3:
        return "pattern", "expected H:MM:SS.mmm"
    hours, minutes, rest = parts
    if not hours.isdigit():
        return "hours", "not a number"
    if not re.fullmatch(r"[0-5]\d", minutes):
        return "minutes", "expected two digits below 60"
    sec_parts = rest.split(".")
    if len(sec_parts) != 2:
        return "seconds", "expected SS.mmm"
    seconds, millis = sec_parts
    if not re.fullmatch(r"[0-5]\d", seconds):
        return "seconds", "expected two digits below 60"
    return "milliseconds", "expected exactly three digits"


def format_timestamp(ms: int) -> str:
    """Inverse of parse_timestamp; hours rendered without padding."""
    if ms < 0:
        raise ValueError(f"negative timestamp: {ms}")
    hours, rem = divmod(ms, 3_600_000)
    minutes, rem = divmod(rem, 60_000)
    seconds, millis = divmod(rem, 1_000)
    return f"{hours}:{minutes:02d}:{seconds:02d}.{millis:03d}"


def parse_records(csv_payload: str, split: str) -> tuple[list[UtteranceRecord], list[RowError]]:
    """Parse one split's CSV payload into records.

    Rows that fail to parse (bad enum, bad timestamp, inverted interval,
    duplicate key) are skipped and reported; a missing required column is
    fatal. The split is a parameter because MELD ships one file per split
    with no split column.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    reader = csv.DictReader(io.StringIO(csv_payload))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required columns: {', '.join(missing)}")

    records: list[UtteranceRecord] = []
    errors: list[RowError] = []
    seen: set[tuple[str, int, int]] = set()
    for row_no, row in enumerate(reader, start=1):
        try:
            record = _parse_row(row, split, row_no)
        except _RowProblem as exc:
            errors.append(RowError(row_no, exc.field_name, exc.message))
            continue
        if record.key in seen:
            errors.append(RowError(row_no, "Utterance_ID", f"duplicate key {record.key}"))
            continue
        seen.add(record.key)
        records.append(record)
    return records, errors


class _RowProblem(Exception):
    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field_name = field_name
        self.message = message


def _parse_int(row: dict, column: str) -> int:
    raw = (row.get(column) or "").strip()
    try:
        return int(raw)
    except ValueError:
        raise _RowProblem(column, f"not an integer: {raw!r}") from None


def _parse_row(row: dict, split: str, row_no: int) -> UtteranceRecord:
    emotion = (row.get("Emotion") or "").strip().lower()
    if emotion not in EMOTIONS:
        raise _RowProblem("Emotion", f"unknown emotion label {emotion!r}")
    sentiment = (row.get("Sentiment") or "").strip().lower()
    if sentiment not in SENTIMENTS:
        raise _RowProblem("Sentiment", f"unknown sentiment label {sentiment!r}")
    try:
        start_ms = parse_timestamp(row.get("StartTime") or "")
    except TimestampError as exc:
        raise _RowProblem("StartTime", str(exc)) from None
    try:
        end_ms = parse_timestamp(row.get("EndTime") or "")
    except TimestampError as exc:
        raise _RowProblem("EndTime", str(exc)) from None
    if start_ms >= end_ms:
        raise _RowProblem("StartTime", f"start {start_ms} not before end {end_ms}")
    return UtteranceRecord(
        split=split,
        dialogue_id=_parse_int(row, "Dialogue_ID"),
        utterance_id=_parse_int(row, "Utterance_ID"),
        speaker=(row.get("Speaker") or "").strip(),
        emotion=emotion,
        sentiment=sentiment,
        season=_parse_int(row, "Season"),
        episode=_parse_int(row, "Episode"),
        start_ms=start_ms,
        end_ms=end_ms,
        text=(row.get("Utterance") or "").strip(),
    )


def strip_description(text: str) -> str:
    """Remove parenthesised/bracketed description spans, e.g. stage directions."""
    out = _DESCRIPTION_RE.sub(" ", text)
    return _WS_RE.sub(" ", out).strip()


def parse_overrides(payload: str) -> list[Override]:
    """Parse a JSON array of override entries ({"key": [split, dia, utt|null], ...})."""
    raw = json.loads(payload)
    if not isinstance(raw, list):
        raise ValueError("override file must be a JSON array")
    overrides = []
    for i, entry in enumerate(raw):
        try:
            split, dialogue_id, utterance_id = entry["key"]
            action = entry["action"]
            payload_str = str(entry.get("payload", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed override entry #{i}: {exc}") from None
        if action not in OVERRIDE_ACTIONS:
            raise ValueError(f"override entry #{i}: unknown action {action!r}")
        if utterance_id is None and action != "resort_dialogue":
            raise ValueError(f"override entry #{i}: null utterance_id requires resort_dialogue")
        overrides.append(
            Override(str(split), int(dialogue_id), None if utterance_id is None else int(utterance_id), action, payload_str)
        )
    return overrides


def load_overrides(path: str | Path) -> list[Override]:
    return parse_overrides(Path(path).read_text(encoding="utf-8"))


def default_overrides() -> list[Override]:
    """The shipped repair list for the known problematic MELD records."""
    payload = resources.files("meldrefine.data").joinpath(DEFAULT_OVERRIDES_RESOURCE).read_text("utf-8")
    return parse_overrides(payload)


def apply_overrides(
    records: list[UtteranceRecord], overrides: list[Override]
) -> tuple[list[UtteranceRecord], OverrideReport]:
    """Apply repair overrides in order; dangling keys are reported, never fatal."""
    result = list(records)
    index = {r.key: i for i, r in enumerate(result)}
    dropped: set[int] = set()
    report = OverrideReport()

    for ov in overrides:
        if ov.action == "resort_dialogue":
            hit = any(
                r.split == ov.split and r.dialogue_id == ov.dialogue_id
                for i, r in enumerate(result)
                if i not in dropped
            )
            # group_dialogues always sorts chronologically; the override is a
            # documented marker, so applying it needs no further work.
            (report.applied if hit else report.dangling).append((ov.key, ov.action))
            continue

        i = index.get((ov.split, ov.dialogue_id, ov.utterance_id))
        if i is None or i in dropped:
            report.dangling.append((ov.key, ov.action))
            continue
        record = result[i]
        if ov.action == "drop":
            dropped.add(i)
        elif ov.action == "strip_description":
            result[i] = replace(record, text=strip_description(record.text))
        elif ov.action == "reassign_dialogue":
            try:
                target = int(ov.payload)
            except ValueError:
                report.dangling.append((ov.key, ov.action))
                continue
            moved = replace(record, dialogue_id=target, sort_first=True)
            if moved.key in index:
                # would break dataset-wide key uniqueness
                report.dangling.append((ov.key, ov.action))
                continue
            del index[record.key]
            index[moved.key] = i
            result[i] = moved
        report.applied.append((ov.key, ov.action))

    kept = [r for i, r in enumerate(result) if i not in dropped]
    return kept, report


def group_dialogues(records: list[UtteranceRecord]) -> list[Dialogue]:
    """Partition records into dialogues ordered by start_ms then utterance_id."""
    buckets: dict[tuple[str, int], list[UtteranceRecord]] = {}
    for r in records:
        buckets.setdefault((r.split, r.dialogue_id), []).append(r)
    dialogues = []
    for (split, dialogue_id), utts in sorted(buckets.items()):
        utts.sort(key=lambda r: (not r.sort_first, r.start_ms, r.utterance_id))
        dialogues.append(Dialogue(split, dialogue_id, utts))
    return dialogues
