"""Adapter run manifest: which models produced the files, at what strides."""

from __future__ import annotations

import json
from pathlib import Path

from .asdscores import AUDIO_FRAMES_PER_VIDEO_FRAME
from .posteriors import FRAME_DURATION_MS


def write_adapter_manifest(
    path: str | Path,
    *,
    asr_model: str,
    detector_model: str,
    asd_model: str,
) -> None:
    payload = {
        "asr_model": asr_model,
        "detector_model": detector_model,
        "asd_model": asd_model,
        "frame_duration_ms": FRAME_DURATION_MS,
        "audio_frames_per_video_frame": AUDIO_FRAMES_PER_VIDEO_FRAME,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_adapter_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
