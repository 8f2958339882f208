"""WAV and video IO plus synthetic smoke-clip synthesis.

Audio is 16-bit PCM mono WAV through the stdlib; video goes through OpenCV
(MJPG/AVI for anything we write ourselves). Smoke clips pair a tone-burst
waveform with bright drifting rectangles standing in for faces, so the
offline detector and scorer have real signal to work on.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np


class MediaError(RuntimeError):
    pass


@dataclass
class Audio:
    samples: np.ndarray  # float64 in [-1, 1], mono
    sample_rate: int

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.samples.shape[0] / self.sample_rate


def read_wav(path: str | Path) -> Audio:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise MediaError(f"{path}: only 16-bit PCM supported")
        n = w.getnframes()
        raw = np.frombuffer(w.readframes(n), dtype="<i2").astype(np.float64) / 32768.0
        channels = w.getnchannels()
        rate = w.getframerate()
    if channels > 1:
        raw = raw.reshape(-1, channels).mean(axis=1)
    return Audio(raw, rate)


def write_wav(path: str | Path, audio: Audio) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(audio.samples, -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def read_video_frames(path: str | Path):
    """Yield (frame_index, frame_or_None); None marks an undecodable frame."""
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise MediaError(f"{path}: cannot open video")
    try:
        declared = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                if index < declared:
                    # container promises more frames; report the gap
                    yield index, None
                    index += 1
                    continue
                break
            yield index, frame
            index += 1
    finally:
        cap.release()


def video_fps(path: str | Path) -> float:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise MediaError(f"{path}: cannot open video")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    cap.release()
    return float(fps)


def write_video(path: str | Path, frames, fps: float) -> None:
    frames = list(frames)
    if not frames:
        raise MediaError(f"{path}: refusing to write an empty video")
    h, w = frames[0].shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    if not writer.isOpened():
        raise MediaError(f"{path}: cannot open video writer")
    try:
        for frame in frames:
            writer.write(frame)
    finally:
        writer.release()


# ---------------------------------------------------------------------------
# Smoke clips

SMOKE_FPS = 25.0
SMOKE_SR = 16_000
_LANE_X_STEP = 140
_FACE_SIZE = 80


@dataclass
class SmokeClip:
    video_path: Path
    audio_path: Path
    n_frames: int
    face_lanes: list[int]
    speaking_lane: int


def make_smoke_clip(
    stem: str | Path,
    seed: int,
    *,
    duration_s: float = 4.0,
    n_faces: int = 2,
    speaking_lane: int = 0,
) -> SmokeClip:
    """A synthetic clip: bright face boxes over a dark scene plus tone bursts.

    The speaking lane's box jitters with the audio envelope so that a
    synchrony-based scorer has a genuine correlation to find.
    """
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration_s * SMOKE_FPS))
    n_samples = int(round(duration_s * SMOKE_SR))
    width = 60 + n_faces * _LANE_X_STEP
    height = 200

    # Tone bursts: on/off envelope at the video frame granularity.
    envelope_frames = np.zeros(n_frames)
    f = 0
    while f < n_frames:
        burst = int(rng.integers(8, 20))
        gap = int(rng.integers(4, 12))
        envelope_frames[f : f + burst] = 1.0
        f += burst + gap
    envelope = np.repeat(envelope_frames, int(SMOKE_SR / SMOKE_FPS))[:n_samples]
    t = np.arange(n_samples) / SMOKE_SR
    tone = 0.4 * np.sin(2 * np.pi * 220.0 * t) + 0.2 * np.sin(2 * np.pi * 467.0 * t)
    samples = tone * envelope + 0.005 * rng.standard_normal(n_samples)

    frames = []
    drift = rng.integers(-2, 3, size=(n_frames, n_faces, 2))
    for fi in range(n_frames):
        frame = np.full((height, width, 3), 20, np.uint8)
        for lane in range(n_faces):
            x = 30 + lane * _LANE_X_STEP + int(drift[fi, lane, 0])
            y = 60 + int(drift[fi, lane, 1])
            size = _FACE_SIZE
            if lane == speaking_lane and envelope_frames[fi] > 0:
                size += int(4 * np.sin(fi * 1.3)) + 4  # mouth-like flutter
            frame[y : y + size, x : x + size] = 230
        frames.append(frame)

    stem = Path(stem)
    video_path = stem.with_suffix(".avi")
    audio_path = stem.with_suffix(".wav")
    write_video(video_path, frames, SMOKE_FPS)
    write_wav(audio_path, Audio(samples, SMOKE_SR))
    return SmokeClip(video_path, audio_path, n_frames, list(range(n_faces)), speaking_lane)
