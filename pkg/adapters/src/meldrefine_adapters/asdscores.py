"""Per-track speaking-score export over the standard block sizes.

Consumes the post-split track list the core emits (`localise --tracks-only`),
splits every track into blocks of up to phi video frames for each
phi in {25, 50, 75, 100, 125, 150}, and writes one scores line per
(track, phi). Fusion is deliberately NOT done here; averaging block sizes is
the core's decision to make.

The audiovisual model sits behind a callable protocol
(face frames, audio frames) -> per-frame scores. The shipped offline backend
scores audiovisual synchrony directly: per-block correlation of face-region
motion energy against audio energy. A TalkNet-style checkpoint would slot in
behind the same protocol; it is not bundled (no redistributable weights).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .media import read_video_frames, read_wav, video_fps
from .posteriors import AdapterError

PHI_VALUES = (25, 50, 75, 100, 125, 150)
AUDIO_FRAMES_PER_VIDEO_FRAME = 4
AUDIO_HOP_MS = 10.0  # so 4 audio frames cover one 25 fps video frame


def read_tracks_jsonl(path: str | Path) -> list[dict]:
    tracks = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                tracks.append(json.loads(line))
    return tracks


def audio_energy_frames(samples: np.ndarray, sample_rate: int, n_frames: int) -> np.ndarray:
    """RMS energy per 10 ms hop, padded/truncated to exactly n_frames."""
    hop = int(sample_rate * AUDIO_HOP_MS / 1000.0)
    out = np.zeros(n_frames)
    for i in range(n_frames):
        chunk = samples[i * hop : (i + 1) * hop]
        if chunk.size:
            out[i] = np.sqrt(np.mean(chunk**2))
    return out


@dataclass
class SynchronyBackend:
    """Correlation of face-region motion energy with audio energy per block."""

    model_id = "motion-audio-synchrony"

    def __call__(self, face_frames: list[np.ndarray], audio_frames: np.ndarray) -> np.ndarray:
        n = len(face_frames)
        if n == 0:
            return np.zeros(0)
        motion = np.zeros(n)
        prev = None
        for i, crop in enumerate(face_frames):
            gray = crop.astype(np.float64)
            if prev is not None and gray.shape == prev.shape:
                motion[i] = np.abs(gray - prev).mean()
            prev = gray
        if n > 1:
            motion[0] = motion[1]
        # collapse the 4x audio frames onto video frames
        audio = audio_frames[: n * AUDIO_FRAMES_PER_VIDEO_FRAME]
        audio = np.pad(audio, (0, n * AUDIO_FRAMES_PER_VIDEO_FRAME - audio.size))
        audio = audio.reshape(n, AUDIO_FRAMES_PER_VIDEO_FRAME).mean(axis=1)

        def z(x):
            s = x.std()
            return (x - x.mean()) / s if s > 1e-9 else np.zeros_like(x)

        return z(motion) * z(audio)


def export_asd_scores(
    tracks_path: str | Path,
    video_path: str | Path,
    audio_path: str | Path,
    out_path: str | Path,
    *,
    backend=None,
    phi_values=PHI_VALUES,
) -> dict:
    """Scores JSON Lines for every (track, phi); per-frame arrays per block."""
    backend = backend or SynchronyBackend()
    tracks = read_tracks_jsonl(tracks_path)
    frames = {i: f for i, f in read_video_frames(video_path)}
    n_video = len(frames)
    audio = read_wav(audio_path)

    fps = video_fps(video_path)
    video_frame_ms = 1000.0 / fps
    if abs(video_frame_ms - AUDIO_FRAMES_PER_VIDEO_FRAME * AUDIO_HOP_MS) > 1.0:
        raise AdapterError(
            f"{video_path}: {fps:.2f} fps breaks the "
            f"{AUDIO_FRAMES_PER_VIDEO_FRAME}:1 audio/video frame contract"
        )
    n_audio = int(audio.duration_ms // AUDIO_HOP_MS)
    if abs(n_audio - AUDIO_FRAMES_PER_VIDEO_FRAME * n_video) > AUDIO_FRAMES_PER_VIDEO_FRAME:
        raise AdapterError(
            f"{audio_path}: {n_audio} audio frames vs {n_video} video frames "
            f"violates the {AUDIO_FRAMES_PER_VIDEO_FRAME}:1 contract"
        )
    energy = audio_energy_frames(audio.samples, audio.sample_rate, n_audio)

    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    n_rows = 0
    with open(out_path, "w", encoding="utf-8") as f:
        for track in sorted(tracks, key=lambda t: t["track_id"]):
            entries = track["entries"]
            crops = []
            for e in entries:
                frame = frames.get(e["frame"])
                if frame is None:
                    crops.append(np.zeros((8, 8), np.uint8))
                    continue
                x1, y1 = max(0, int(e["x1"])), max(0, int(e["y1"]))
                x2, y2 = int(e["x2"]), int(e["y2"])
                region = frame[y1:y2, x1:x2]
                if region.size == 0:
                    crops.append(np.zeros((48, 48), np.uint8))
                    continue
                crop = cv2.cvtColor(region, cv2.COLOR_BGR2GRAY)
                crops.append(cv2.resize(crop, (48, 48)))
            for phi in phi_values:
                scores = np.zeros(len(entries))
                for lo in range(0, len(entries), phi):
                    hi = min(lo + phi, len(entries))
                    first = entries[lo]["frame"]
                    a_lo = first * AUDIO_FRAMES_PER_VIDEO_FRAME
                    a_hi = a_lo + (hi - lo) * AUDIO_FRAMES_PER_VIDEO_FRAME
                    scores[lo:hi] = backend(crops[lo:hi], energy[a_lo:a_hi])
                f.write(
                    json.dumps(
                        {
                            "track_id": track["track_id"],
                            "phi": phi,
                            "scores": [float(s) for s in scores],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                n_rows += 1
    return {"tracks": len(tracks), "rows": n_rows, "model": backend.model_id, "out": str(out_path)}
