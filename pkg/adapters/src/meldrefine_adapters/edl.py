"""Edit decision list execution against source media.

Each aligned EDL row is a list of pieces: a slice of one source utterance
clip, or inserted silence. Audio is cut sample-exactly from per-utterance
WAV files; when matching AVI clips exist the video is re-cut too, with black
frames standing in for silence. Sources follow the
`<split>_<dialogue>_<utterance>.wav/.avi` naming convention.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .media import Audio, MediaError, read_video_frames, read_wav, video_fps, write_video, write_wav


@dataclass
class EdlReport:
    executed: list[tuple[str, int, int]] = field(default_factory=list)
    skipped: list[tuple[tuple[str, int, int], str]] = field(default_factory=list)


def read_edl_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _source_stem(sources_dir: Path, split: str, dialogue_id: int, utterance_id: int) -> Path:
    return sources_dir / f"{split}_{dialogue_id}_{utterance_id}"


def _cut_audio(row: dict, sources_dir: Path) -> Audio:
    sample_rate = None
    chunks = []
    for piece in row["pieces"]:
        src = piece["source_utterance_id"]
        length_ms = piece["end_ms"] - piece["start_ms"]
        if src is None:
            if sample_rate is None:
                sample_rate = 16_000
            chunks.append(np.zeros(int(sample_rate * length_ms / 1000.0)))
            continue
        wav_path = _source_stem(sources_dir, row["split"], row["dialogue_id"], src).with_suffix(".wav")
        if not wav_path.exists():
            raise FileNotFoundError(wav_path)
        audio = read_wav(wav_path)
        if sample_rate is None:
            sample_rate = audio.sample_rate
        elif audio.sample_rate != sample_rate:
            raise MediaError(f"{wav_path}: sample rate differs within one dialogue")
        lo = int(audio.sample_rate * piece["start_ms"] / 1000.0)
        hi = int(audio.sample_rate * piece["end_ms"] / 1000.0)
        chunks.append(audio.samples[lo:hi])
    return Audio(np.concatenate(chunks) if chunks else np.zeros(0), sample_rate or 16_000)


def _cut_video(row: dict, sources_dir: Path, out_path: Path) -> bool:
    frames_out = []
    fps = None
    shape = None
    for piece in row["pieces"]:
        src = piece["source_utterance_id"]
        if src is not None:
            avi = _source_stem(sources_dir, row["split"], row["dialogue_id"], src).with_suffix(".avi")
            if not avi.exists():
                return False
            if fps is None:
                fps = video_fps(avi)
    if fps is None:
        fps = 25.0
    import cv2

    for piece in row["pieces"]:
        src = piece["source_utterance_id"]
        n = int(round((piece["end_ms"] - piece["start_ms"]) * fps / 1000.0))
        if src is None:
            if shape is None:
                shape = (64, 64, 3)
            frames_out.extend(np.zeros(shape, np.uint8) for _ in range(n))
            continue
        avi = _source_stem(sources_dir, row["split"], row["dialogue_id"], src).with_suffix(".avi")
        lo = int(round(piece["start_ms"] * fps / 1000.0))
        clip = [f for _, f in read_video_frames(avi) if f is not None]
        segment = clip[lo : lo + n]
        if segment and shape is None:
            shape = segment[0].shape
        # source clips can disagree on resolution; normalise to the first seen
        segment = [
            f if f.shape == shape else cv2.resize(f, (shape[1], shape[0]))
            for f in segment
        ]
        frames_out.extend(segment)
    if not frames_out:
        return False
    write_video(out_path, frames_out, fps)
    return True


def execute_edl(
    edl_path: str | Path,
    sources_dir: str | Path,
    out_dir: str | Path,
    *,
    cut_video: bool = True,
) -> EdlReport:
    """One media cut per aligned EDL row; missing sources are reported skips."""
    sources_dir = Path(sources_dir)
    out_dir = Path(out_dir)
    report = EdlReport()
    for row in read_edl_jsonl(edl_path):
        key = (row["split"], row["dialogue_id"], row["utterance_id"])
        if row["status"] != "aligned" or not row["pieces"]:
            continue
        target = out_dir / row["split"] / str(row["dialogue_id"]) / str(row["utterance_id"])
        try:
            audio = _cut_audio(row, sources_dir)
        except FileNotFoundError as exc:
            report.skipped.append((key, f"missing source {exc}"))
            continue
        except (MediaError, wave.Error, EOFError) as exc:
            # corrupted source files are a documented dataset defect
            report.skipped.append((key, f"unreadable source: {exc}"))
            continue
        write_wav(target / "audio.wav", audio)
        if cut_video:
            _cut_video(row, sources_dir, target / "video.avi")
        report.executed.append(key)
    return report
