"""Physical dialogue-audio concatenation driven by core timeline files.

The core's `realign --timelines-only` emits one timeline per dialogue; this
adapter realises each as an actual waveform by slicing the per-utterance
source WAVs at the segment offsets and inserting the capped silence blocks,
producing the concatenated audio the ASR posterior export consumes.
"""

from __future__ import annotations

import json
import sys
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .media import Audio, MediaError, read_wav, write_wav


@dataclass
class ConcatReport:
    written: list[tuple[str, int]] = field(default_factory=list)
    skipped: list[tuple[tuple[str, int], str]] = field(default_factory=list)
    padded_sources: int = 0


def read_timelines_jsonl(path: str | Path) -> list[dict]:
    timelines = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                timelines.append(json.loads(line))
    return timelines


def concat_dialogue_audio(
    timeline: dict, sources_dir: Path, report: ConcatReport
) -> Audio:
    split = timeline["split"]
    dialogue_id = timeline["dialogue_id"]
    chunks = []
    sample_rate = None
    for seg in timeline["segments"]:
        length_ms = seg["global_end_ms"] - seg["global_start_ms"]
        if seg["kind"] == "silence":
            rate = sample_rate or 16_000
            chunks.append(np.zeros(int(rate * length_ms / 1000.0)))
            continue
        wav_path = sources_dir / f"{split}_{dialogue_id}_{seg['utterance_id']}.wav"
        audio = read_wav(wav_path)
        if sample_rate is None:
            sample_rate = audio.sample_rate
        elif audio.sample_rate != sample_rate:
            raise MediaError(f"{wav_path}: sample rate differs within one dialogue")
        lo = int(sample_rate * seg["source_start_ms"] / 1000.0)
        hi = int(sample_rate * seg["source_end_ms"] / 1000.0)
        chunk = audio.samples[lo:hi]
        want = hi - lo
        if chunk.shape[0] < want:
            # source clip shorter than its dataset timestamps claim
            chunk = np.pad(chunk, (0, want - chunk.shape[0]))
            report.padded_sources += 1
        chunks.append(chunk)
    return Audio(np.concatenate(chunks) if chunks else np.zeros(0), sample_rate or 16_000)


def export_concat_audio(
    timelines_path: str | Path, sources_dir: str | Path, out_dir: str | Path
) -> ConcatReport:
    """One `<split>_<dialogue>.wav` per timeline; missing sources skip the dialogue."""
    sources_dir = Path(sources_dir)
    out_dir = Path(out_dir)
    report = ConcatReport()
    for timeline in read_timelines_jsonl(timelines_path):
        key = (timeline["split"], timeline["dialogue_id"])
        try:
            audio = concat_dialogue_audio(timeline, sources_dir, report)
        except FileNotFoundError as exc:
            report.skipped.append((key, f"missing source {exc}"))
            continue
        except (MediaError, wave.Error, EOFError) as exc:
            report.skipped.append((key, f"unreadable source: {exc}"))
            continue
        write_wav(out_dir / f"{key[0]}_{key[1]}.wav", audio)
        report.written.append(key)
    for key, reason in report.skipped:
        print(f"warning: skipped dialogue {key}: {reason}", file=sys.stderr)
    return report
