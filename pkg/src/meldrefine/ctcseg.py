"""CTC-segmentation forced alignment over character posterior matrices.

The concatenated transcript is expanded with blanks into the usual CTC state
sequence and aligned to the frame-level log-posteriors by max-product dynamic
programming: the best monotone state path consuming every symbol across all
frames, ending in the last or second-to-last expanded state. Backtracking
recovers the frame at which each symbol is first entered (its emission), and
per-utterance time spans fall out of the emission frames of each utterance's
first and last character.

Everything runs in log-space with -inf for unreachable states; the inner loop
is deterministic, so dialogues can be aligned concurrently without any
cross-talk.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .transcript import Bound, Vocabulary

POSTERIOR_MAGIC = b"CTCP0001"
ROW_LOGSUMEXP_TOL = 1e-3

DEFAULT_MIN_SPAN_MS = 200
DEFAULT_MIN_CONFIDENCE = math.log(0.01)

STATUS_ALIGNED = "aligned"
STATUS_DROPPED_SHORT = "dropped_short"
STATUS_DROPPED_LOW_CONFIDENCE = "dropped_low_confidence"
STATUS_DEGENERATE = "degenerate"

NEG_INF = float("-inf")


class PosteriorFormatError(ValueError):
    """Posterior file violates the container format or the adapter contract."""


class InfeasibleAlignmentError(ValueError):
    """No valid CTC path exists for the given frames and symbol sequence."""


@dataclass
class PosteriorMatrix:
    """Frame x vocabulary log-probabilities with frame timing metadata."""

    vocab: Vocabulary
    frame_duration_ms: float
    logprobs: np.ndarray  # (frames, |vocab|) float32, natural logs
    dialogue_key: tuple[str, int] | None = None

    @property
    def frames(self) -> int:
        return int(self.logprobs.shape[0])

    def validate(self) -> None:
        if self.logprobs.ndim != 2 or self.logprobs.shape[1] != len(self.vocab):
            raise PosteriorFormatError(
                f"logprobs shape {self.logprobs.shape} does not match vocab size {len(self.vocab)}"
            )
        if self.frames < 1:
            raise PosteriorFormatError("posterior matrix must have at least one frame")
        if self.frame_duration_ms <= 0:
            raise PosteriorFormatError(f"non-positive frame duration {self.frame_duration_ms}")
        rows = self.logprobs.astype(np.float64)
        m = rows.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(rows - m).sum(axis=1))
        worst = float(np.abs(lse).max())
        if worst > ROW_LOGSUMEXP_TOL:
            raise PosteriorFormatError(
                f"rows do not log-sum-exp to 0 (worst |lse| = {worst:.2e} > {ROW_LOGSUMEXP_TOL})"
            )

    def save(self, path: str | Path) -> None:
        header = {
            "frames": self.frames,
            "vocab": list(self.vocab.symbols),
            "frame_duration_ms": self.frame_duration_ms,
            "dialogue_key": list(self.dialogue_key) if self.dialogue_key else None,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        payload = np.ascontiguousarray(self.logprobs, dtype="<f4").tobytes()
        with open(path, "wb") as f:
            f.write(POSTERIOR_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(payload)

    @classmethod
    def load(cls, path: str | Path, validate: bool = True) -> "PosteriorMatrix":
        raw = Path(path).read_bytes()
        header, offset = _read_header(raw, path)
        frames = int(header["frames"])
        vocab = Vocabulary.from_symbols(header["vocab"])
        expected = frames * len(vocab) * 4
        payload = raw[offset:]
        if len(payload) != expected:
            raise PosteriorFormatError(
                f"{path}: payload is {len(payload)} bytes, expected {expected}"
            )
        logprobs = np.frombuffer(payload, dtype="<f4").reshape(frames, len(vocab))
        key = header.get("dialogue_key")
        matrix = cls(
            vocab=vocab,
            frame_duration_ms=float(header["frame_duration_ms"]),
            logprobs=logprobs,
            dialogue_key=(key[0], int(key[1])) if key else None,
        )
        if validate:
            matrix.validate()
        return matrix

    @staticmethod
    def load_key(path: str | Path) -> tuple[str, int] | None:
        """Read only the dialogue key from a posterior file header."""
        with open(path, "rb") as f:
            raw = f.read(8 + 4)
            header_len = _check_magic(raw, path)
            header = json.loads(f.read(header_len).decode("utf-8"))
        key = header.get("dialogue_key")
        return (key[0], int(key[1])) if key else None


def _check_magic(prefix: bytes, path) -> int:
    if len(prefix) < 12 or prefix[:8] != POSTERIOR_MAGIC:
        raise PosteriorFormatError(f"{path}: bad magic, not a posterior file")
    return struct.unpack("<I", prefix[8:12])[0]


def _read_header(raw: bytes, path) -> tuple[dict, int]:
    header_len = _check_magic(raw[:12], path)
    end = 12 + header_len
    if len(raw) < end:
        raise PosteriorFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PosteriorFormatError(f"{path}: unreadable header: {exc}") from None
    for field_name in ("frames", "vocab", "frame_duration_ms"):
        if field_name not in header:
            raise PosteriorFormatError(f"{path}: header missing {field_name!r}")
    return header, end


def expand_with_blanks(chars, blank_index: int = 0) -> np.ndarray:
    """Interleave the blank symbol: [b, c1, b, c2, ..., cN, b]."""
    chars = np.asarray(chars, dtype=np.int64)
    if chars.size == 0:
        raise ValueError("cannot expand an empty symbol sequence")
    expanded = np.full(2 * chars.size + 1, blank_index, dtype=np.int64)
    expanded[1::2] = chars
    return expanded


@dataclass
class CharAlignment:
    """Emission frames per expanded state; -1 marks states the path skipped."""

    expanded: np.ndarray
    frames: np.ndarray
    symbol_logprobs: np.ndarray
    total: float

    def char_frame(self, char_index: int) -> int:
        return int(self.frames[2 * char_index + 1])

    def char_logprob(self, char_index: int) -> float:
        return float(self.symbol_logprobs[2 * char_index + 1])


def viterbi_align(
    post: PosteriorMatrix, expanded: np.ndarray, blank_index: int = 0
) -> CharAlignment:
    """Best-path CTC alignment of an expanded symbol sequence to posteriors.

    Transitions per frame: stay, advance by one, or advance by two when the
    target state is a non-blank differing from the state two back. The path
    must consume every symbol over the full frame range and end in the last
    or second-to-last state. On score ties the stay transition wins, then the
    shorter advance; equal end states prefer the last character over the
    trailing blank.
    """
    lp = post.logprobs.astype(np.float64)
    T = lp.shape[0]
    sym = np.asarray(expanded, dtype=np.int64)
    S = sym.size
    if S == 0:
        raise ValueError("empty expanded sequence")
    nonblank = int((sym != blank_index).sum())
    if T < nonblank:
        raise InfeasibleAlignmentError(
            f"{T} frames cannot carry {nonblank} non-blank symbols"
        )

    allow2 = np.zeros(S, dtype=bool)
    if S > 2:
        allow2[2:] = (sym[2:] != blank_index) & (sym[2:] != sym[:-2])

    score = np.full(S, NEG_INF)
    score[0] = lp[0, sym[0]]
    if S > 1:
        score[1] = lp[0, sym[1]]
    backptr = np.zeros((T, S), dtype=np.uint8)  # 0 stay, 1 advance, 2 skip-blank
    cols = np.arange(S)

    for t in range(1, T):
        stay = score
        adv1 = np.concatenate(([NEG_INF], score[:-1]))
        adv2 = np.where(allow2, np.concatenate(([NEG_INF, NEG_INF], score[:-2])), NEG_INF)
        cand = np.stack((stay, adv1, adv2))
        choice = cand.argmax(axis=0)  # first max wins: stay > advance > skip
        backptr[t] = choice
        score = cand[choice, cols] + lp[t, sym]

    if S >= 2 and score[S - 2] >= score[S - 1]:
        state = S - 2
    else:
        state = S - 1
    total = float(score[state])
    if not np.isfinite(total):
        raise InfeasibleAlignmentError(
            "no feasible CTC path (repeated symbols need separating frames)"
        )

    frames = np.full(S, -1, dtype=np.int64)
    for t in range(T - 1, 0, -1):
        step = int(backptr[t, state])
        if step:
            frames[state] = t
            state -= step
    frames[state] = 0

    visited = frames >= 0
    logprobs = np.full(S, np.nan)
    logprobs[visited] = lp[frames[visited], sym[visited]]
    return CharAlignment(sym, frames, logprobs, total)


@dataclass(frozen=True)
class AlignedSpan:
    utterance_id: int
    global_start_ms: int
    global_end_ms: int
    confidence: float
    status: str = STATUS_ALIGNED

    @property
    def length_ms(self) -> int:
        return self.global_end_ms - self.global_start_ms


def utterance_spans(
    align: CharAlignment, bounds: list[Bound], frame_duration_ms: float
) -> list[AlignedSpan]:
    """Per-utterance spans from the emission frames of each bound's characters.

    Start is the first character's frame, end the frame after the last
    character's; confidence is the mean per-character log-probability.
    """
    spans = []
    for b in bounds:
        f_first = align.char_frame(b.first)
        f_last = align.char_frame(b.last)
        char_lps = align.symbol_logprobs[2 * b.first + 1 : 2 * b.last + 2 : 2]
        spans.append(
            AlignedSpan(
                utterance_id=b.utterance_id,
                global_start_ms=int(round(f_first * frame_duration_ms)),
                global_end_ms=int(round((f_last + 1) * frame_duration_ms)),
                confidence=float(np.mean(char_lps)),
            )
        )
    return spans


def filter_spans(
    spans: list[AlignedSpan],
    min_span_ms: int = DEFAULT_MIN_SPAN_MS,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> list[AlignedSpan]:
    """Flag spans that are too short or too unlikely to be a real alignment."""
    out = []
    for span in spans:
        if span.length_ms < min_span_ms:
            status = STATUS_DROPPED_SHORT
        elif span.confidence < min_confidence:
            status = STATUS_DROPPED_LOW_CONFIDENCE
        else:
            status = STATUS_ALIGNED
        out.append(replace(span, status=status))
    return out
