"""Character posterior export: audio in, CTCP0001 posterior matrix out.

Two backends share one contract (log-softmax rows over the supplied
vocabulary at a 20 ms stride, blank-dominated on silence):

- `Wav2Vec2Backend` wraps a pretrained CTC checkpoint from a local directory
  (needs the optional `models` extra installed and a downloaded checkpoint).
- `RandomProjectionBackend` is the deterministic offline stand-in used by the
  smoke tests: seeded random projections over log-mel features with an
  energy-gated blank bias. It is not a recogniser, but it satisfies every
  format and contract obligation of the real model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .media import Audio, read_wav

POSTERIOR_MAGIC = b"CTCP0001"
FRAME_DURATION_MS = 20.0
MODEL_SAMPLE_RATE = 16_000


class AdapterError(RuntimeError):
    pass


def load_vocab(path: str | Path) -> list[str]:
    symbols = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(symbols, list) or not symbols:
        raise AdapterError(f"{path}: vocabulary must be a non-empty JSON list")
    return [str(s) for s in symbols]


def _resample(audio: Audio, target_rate: int) -> Audio:
    if audio.sample_rate == target_rate:
        return audio
    n_out = int(round(audio.samples.shape[0] * target_rate / audio.sample_rate))
    x_old = np.linspace(0.0, 1.0, audio.samples.shape[0], endpoint=False)
    x_new = np.linspace(0.0, 1.0, n_out, endpoint=False)
    return Audio(np.interp(x_new, x_old, audio.samples), target_rate)


def log_mel_features(audio: Audio, hop_ms: float = FRAME_DURATION_MS, n_mels: int = 40) -> np.ndarray:
    """Log-mel energies with a 25 ms window; one row per hop."""
    sr = audio.sample_rate
    hop = int(sr * hop_ms / 1000.0)
    win = int(sr * 0.025)
    x = audio.samples
    n_frames = max(1, 1 + (len(x) - win) // hop) if len(x) >= win else 1
    frames = np.zeros((n_frames, win))
    for i in range(n_frames):
        chunk = x[i * hop : i * hop + win]
        frames[i, : len(chunk)] = chunk
    window = np.hanning(win)
    spec = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2

    n_bins = spec.shape[1]
    freqs = np.linspace(0, sr / 2, n_bins)
    mel_pts = np.linspace(_hz_to_mel(0), _hz_to_mel(sr / 2), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0, 1)
    return np.log(spec @ bank.T + 1e-10)


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class RandomProjectionBackend:
    """Seeded untrained projection head over log-mel features.

    Silence handling mimics a trained CTC model: frames whose RMS energy sits
    below the gate get a strong blank boost, so silent audio comes out
    blank-dominated.
    """

    seed: int = 0
    blank_gate_db: float = -45.0

    model_id = "random-projection-ctc"

    def __call__(self, audio: Audio, vocab: list[str]) -> np.ndarray:
        audio = _resample(audio, MODEL_SAMPLE_RATE)
        feats = log_mel_features(audio)
        rng = np.random.default_rng(self.seed)
        w1 = rng.standard_normal((feats.shape[1], 64)) / np.sqrt(feats.shape[1])
        w2 = rng.standard_normal((64, len(vocab))) / np.sqrt(64)
        hidden = np.tanh((feats - feats.mean()) / (feats.std() + 1e-9) @ w1)
        logits = hidden @ w2

        hop = int(MODEL_SAMPLE_RATE * FRAME_DURATION_MS / 1000.0)
        win = int(MODEL_SAMPLE_RATE * 0.025)
        rms_db = np.full(feats.shape[0], -120.0)
        for i in range(feats.shape[0]):
            chunk = audio.samples[i * hop : i * hop + win]
            if chunk.size:
                rms_db[i] = 20 * np.log10(np.sqrt(np.mean(chunk**2)) + 1e-12)
        blank_boost = 8.0 / (1.0 + np.exp((rms_db - self.blank_gate_db) / 3.0))
        logits[:, 0] += blank_boost
        return _log_softmax(logits).astype(np.float32)


@dataclass
class Wav2Vec2Backend:
    """Pretrained CTC transformer loaded from a local checkpoint directory."""

    checkpoint_dir: str

    @property
    def model_id(self) -> str:
        return f"wav2vec2:{self.checkpoint_dir}"

    def __call__(self, audio: Audio, vocab: list[str]) -> np.ndarray:
        try:
            import torch
            from transformers import Wav2Vec2ForCTC, Wav2Vec2Processor
        except ImportError as exc:  # pragma: no cover - needs the models extra
            raise AdapterError(
                "Wav2Vec2Backend needs the 'models' extra (torch + transformers)"
            ) from exc
        audio = _resample(audio, MODEL_SAMPLE_RATE)
        processor = Wav2Vec2Processor.from_pretrained(self.checkpoint_dir)
        model = Wav2Vec2ForCTC.from_pretrained(self.checkpoint_dir).eval()
        model_vocab = [
            tok for tok, _ in sorted(processor.tokenizer.get_vocab().items(), key=lambda kv: kv[1])
        ]
        if model_vocab != vocab:
            raise AdapterError(
                "vocabulary file does not byte-match the checkpoint's tokenizer vocabulary"
            )
        inputs = processor(
            audio.samples.astype(np.float32),
            sampling_rate=MODEL_SAMPLE_RATE,
            return_tensors="pt",
        )
        with torch.no_grad():
            logits = model(inputs.input_values).logits[0]
        return torch.log_softmax(logits, dim=-1).numpy().astype(np.float32)


def export_posteriors(
    audio_path: str | Path,
    vocab_path: str | Path,
    out_path: str | Path,
    *,
    dialogue_key: tuple[str, int] | None = None,
    backend=None,
) -> dict:
    """Write a CTCP0001 posterior file for one concatenated dialogue audio."""
    backend = backend or RandomProjectionBackend()
    audio = read_wav(audio_path)
    vocab = load_vocab(vocab_path)
    logprobs = backend(audio, vocab)
    frames = logprobs.shape[0]

    expected = audio.duration_ms / FRAME_DURATION_MS
    if abs(frames - expected) > 1 + expected * 0.01:
        raise AdapterError(
            f"{audio_path}: backend produced {frames} frames for "
            f"{audio.duration_ms:.0f} ms audio (expected ~{expected:.0f})"
        )

    header = {
        "frames": frames,
        "vocab": vocab,
        "frame_duration_ms": FRAME_DURATION_MS,
        "dialogue_key": list(dialogue_key) if dialogue_key else None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as f:
        f.write(POSTERIOR_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(logprobs, dtype="<f4").tobytes())
    return {"frames": frames, "model": backend.model_id, "out": str(out_path)}
