"""Synthetic ground-truth fixtures for property tests and the end-to-end check.

Posterior fixtures embed a known valid CTC path (peaked log-posteriors plus
bounded additive noise); detection/score fixtures build spatially disjoint
face lanes whose tracks, conflicts and winning speaker are known by
construction. Everything is a pure function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .ctcseg import PosteriorMatrix
from .schema import EMOTIONS, SENTIMENTS, UtteranceRecord
from .tracks import Box, FaceDetection
from .transcript import ConcatTranscript, Vocabulary, concat_transcripts

DEFAULT_FRAME_DURATION_MS = 20.0
PEAK_LOGIT = 6.0

LEXICON = (
    "YES NO RIGHT OKAY SURE HELLO LISTEN REALLY WAIT WHAT COME ON STOP "
    "LOOK HERE THERE MAYBE NEVER ALWAYS TODAY SORRY THANKS GREAT FINE WOW"
).split()

_LANE_X_STEP = 140
_LANE_BOX = 80
_SCORE_BASE = 0.8
_SCORE_JITTER = 0.15


@dataclass
class SyntheticDialogue:
    """A posterior matrix with its embedded, recoverable alignment."""

    transcript: ConcatTranscript
    posterior: PosteriorMatrix
    char_frames: np.ndarray
    true_spans: dict[int, tuple[int, int]]  # utterance_id -> (first, last char frame)
    noise: float


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def gen_posteriors(
    texts: list[tuple[int, str]],
    frame_budget: int,
    noise: float,
    seed: int,
    *,
    vocab: Vocabulary | None = None,
    frame_duration_ms: float = DEFAULT_FRAME_DURATION_MS,
    dialogue_key: tuple[str, int] | None = None,
    peak: float = PEAK_LOGIT,
) -> SyntheticDialogue:
    """Posteriors tracing a chosen valid CTC path through the given texts.

    At noise 0 the embedded path is the unique optimum (every frame is peaked
    on the path symbol, so any deviating path loses the peak margin at least
    once); the path stays optimal with high probability while the noise scale
    is well below the peak logit.
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    vocab = vocab or Vocabulary.default()
    rng = np.random.default_rng(seed)
    ct = concat_transcripts(texts, vocab)
    chars = np.asarray(ct.chars, dtype=np.int64)
    M = chars.size
    expanded_len = 2 * M + 1
    if frame_budget < expanded_len:
        raise ValueError(
            f"frame budget {frame_budget} below expanded length {expanded_len}"
        )
    T = int(frame_budget)

    # Minimal frame gap to the previous char: equal neighbours need the
    # in-between blank emitted, everything else can chain directly.
    need = np.ones(M, dtype=np.int64)
    need[0] = 0
    need[1:] += (chars[1:] == chars[:-1]).astype(np.int64)

    if T == expanded_len:
        frames = np.arange(M, dtype=np.int64) * 2 + 1
    else:
        desired = _desired_positions(texts, ct, T, rng)
        frames = np.empty(M, dtype=np.int64)
        cursor = 0
        for k in range(M):
            lo = cursor + need[k] if k else max(int(round(desired[0])), 0)
            frames[k] = max(int(round(desired[k])), lo)
            cursor = frames[k]
        frames[M - 1] = min(frames[M - 1], T - 1)
        for k in range(M - 2, -1, -1):
            frames[k] = min(frames[k], frames[k + 1] - need[k + 1])

    path_symbols = np.zeros(T, dtype=np.int64)
    path_symbols[frames] = chars
    logits = np.zeros((T, len(vocab)))
    logits[np.arange(T), path_symbols] = peak
    if noise > 0:
        logits = logits + noise * rng.standard_normal((T, len(vocab)))
    logprobs = _log_softmax(logits).astype(np.float32)

    true_spans = {
        b.utterance_id: (int(frames[b.first]), int(frames[b.last])) for b in ct.bounds
    }
    posterior = PosteriorMatrix(vocab, frame_duration_ms, logprobs, dialogue_key)
    return SyntheticDialogue(ct, posterior, frames, true_spans, noise)


def _desired_positions(texts, ct: ConcatTranscript, T: int, rng) -> np.ndarray:
    """Cluster char positions into per-utterance blocks proportional to length."""
    inner = {b.utterance_id: b.last - b.first + 1 for b in ct.bounds}
    lengths = [inner.get(uid, 0) + 2 for uid, _ in texts]
    total = sum(lengths)
    desired = np.empty(sum(lengths))
    cursor = 0.0
    k = 0
    for length in lengths:
        width = T * length / total
        step = width / (length + 1)
        for j in range(length):
            desired[k] = cursor + step * (j + 1) + rng.uniform(-0.3, 0.3) * step
            k += 1
        cursor += width
    return desired


# ---------------------------------------------------------------------------
# Track / score fixtures


@dataclass(frozen=True)
class FaceSpec:
    lane: int
    appear: tuple[int, int]  # inclusive frame interval
    speaking: tuple[tuple[int, int], ...] = ()  # inclusive intervals

    def speaks_at(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.speaking)


@dataclass(frozen=True)
class TrackScenario:
    name: str
    n_frames: int
    faces: tuple[FaceSpec, ...]
    cuts: tuple[tuple[int, int], ...] | None = None  # half-open intervals


@dataclass
class ExpectedTrack:
    track_id: int
    lane: int
    frames: list[int]
    speaking_count: int


@dataclass
class TrackCase:
    scenario: TrackScenario
    per_frame: list[list[FaceDetection]]
    scores: dict[int, dict[int, np.ndarray]]
    cuts: list[tuple[int, int]]
    expected_tracks: list[ExpectedTrack]
    expected_retained: list[int]
    expected_faces: list[tuple[int, int]]  # (frame, lane) in frame order


def scenario(name: str, n_frames: int = 60, speaker_lane: int = 0) -> TrackScenario:
    """Named conflict patterns used by tests and the end-to-end fixture."""
    last = n_frames - 1
    if name == "single_speaker_two_silent":
        faces = tuple(
            FaceSpec(lane, (0, last), ((0, last),) if lane == speaker_lane else ())
            for lane in range(3)
        )
        return TrackScenario(name, n_frames, faces)
    if name == "two_faces_one_speaking":
        faces = tuple(
            FaceSpec(lane, (0, last), ((0, last),) if lane == speaker_lane else ())
            for lane in range(2)
        )
        return TrackScenario(name, n_frames, faces)
    if name == "triangle_equal":
        faces = tuple(FaceSpec(lane, (0, last), ((0, last),)) for lane in range(3))
        return TrackScenario(name, n_frames, faces)
    if name == "path_conflict":
        # Overlaps A-B and B-C only; counts 3, 10, 4 make B the optimum.
        return TrackScenario(
            name,
            25,
            (
                FaceSpec(0, (0, 9), ((0, 2),)),
                FaceSpec(1, (5, 19), ((5, 14),)),
                FaceSpec(2, (15, 24), ((15, 18),)),
            ),
        )
    if name == "cut_straddle":
        half = n_frames // 2
        return TrackScenario(
            name,
            n_frames,
            (FaceSpec(0, (0, last), ((0, last),)),),
            cuts=((0, half), (half, n_frames)),
        )
    if name == "all_silent":
        faces = tuple(FaceSpec(lane, (0, last)) for lane in range(2))
        return TrackScenario(name, n_frames, faces)
    raise ValueError(f"unknown scenario {name!r}")


def _lane_box(lane: int, frame: int, rng_offsets: np.ndarray) -> Box:
    dx, dy = rng_offsets[frame]
    x = 10 + lane * _LANE_X_STEP + dx
    y = 40 + dy
    return Box(float(x), float(y), float(x + _LANE_BOX), float(y + _LANE_BOX))


def gen_tracks(spec: TrackScenario, seed: int) -> TrackCase:
    """Detection and score streams plus the expected active-speaker outcome.

    Lanes are 140 px apart with 80 px boxes drifting at most 2 px per axis,
    so within-identity consecutive IoU stays above 0.8 and cross-identity IoU
    is exactly 0. The expected outcome is computed by construction, with an
    independent exhaustive search for conflict resolution.
    """
    rng = np.random.default_rng(seed)
    offsets = rng.integers(-2, 3, size=(spec.n_frames, 2))

    per_frame: list[list[FaceDetection]] = []
    for f in range(spec.n_frames):
        dets = [
            FaceDetection(f, _lane_box(face.lane, f, offsets))
            for face in spec.faces
            if face.appear[0] <= f <= face.appear[1]
        ]
        dets.sort(key=lambda d: d.box.x1)
        per_frame.append(dets)

    cuts = list(spec.cuts) if spec.cuts else [(0, spec.n_frames)]
    cut_starts = sorted(s for s, _ in cuts)

    # Ground-truth tracks: each face's appearance split at cut starts,
    # ordered exactly like the linker orders them.
    parts = []
    for face in spec.faces:
        first, last = face.appear
        boundaries = [s for s in cut_starts if first < s <= last]
        lo = first
        for b in boundaries + [last + 1]:
            parts.append((face, list(range(lo, b))))
            lo = b
            if lo > last:
                break
    parts = [p for p in parts if p[1]]
    parts.sort(key=lambda p: (p[1][0], 10 + p[0].lane * _LANE_X_STEP + offsets[p[1][0]][0]))

    expected_tracks = []
    for track_id, (face, frames) in enumerate(parts):
        count = sum(1 for f in frames if face.speaks_at(f))
        expected_tracks.append(ExpectedTrack(track_id, face.lane, frames, count))

    scores: dict[int, dict[int, np.ndarray]] = {}
    phi_values = (25, 50, 75, 100, 125, 150)
    for et, (face, frames) in zip(expected_tracks, parts):
        per_phi = {}
        for phi in phi_values:
            jitter = rng.uniform(-_SCORE_JITTER, _SCORE_JITTER, size=len(frames))
            base = np.asarray(
                [_SCORE_BASE if face.speaks_at(f) else -_SCORE_BASE for f in frames]
            )
            per_phi[phi] = base + jitter
        scores[et.track_id] = per_phi

    expected_retained, expected_faces = _expected_outcome(expected_tracks, parts, scores, cut_starts)
    return TrackCase(spec, per_frame, scores, cuts, expected_tracks, expected_retained, expected_faces)


def _expected_outcome(expected_tracks, parts, scores, cut_starts):
    """Independent reference for conflict resolution and assembly."""
    fused = {
        et.track_id: np.stack([scores[et.track_id][p] for p in sorted(scores[et.track_id])]).mean(axis=0)
        for et in expected_tracks
    }
    speaking_ids = [et.track_id for et in expected_tracks if (fused[et.track_id] > 0).any()]
    frame_sets = {et.track_id: set(et.frames) for et in expected_tracks}
    from bisect import bisect_right

    def cut_of(frame):
        return bisect_right(cut_starts, frame) - 1

    cut_ids = {et.track_id: cut_of(et.frames[0]) for et in expected_tracks}

    edges = [
        (a, b)
        for a, b in combinations(speaking_ids, 2)
        if cut_ids[a] == cut_ids[b] and frame_sets[a] & frame_sets[b]
    ]
    neighbours: dict[int, set[int]] = {}
    for a, b in edges:
        neighbours.setdefault(a, set()).add(b)
        neighbours.setdefault(b, set()).add(a)
    components: list[list[int]] = []
    visited: set[int] = set()
    for root in sorted(neighbours):
        if root in visited:
            continue
        comp = []
        stack = [root]
        visited.add(root)
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt in neighbours[node]:
                if nxt not in visited:
                    visited.add(nxt)
                    stack.append(nxt)
        components.append(sorted(comp))

    counts = {et.track_id: et.speaking_count for et in expected_tracks}
    eliminated: set[int] = set()
    edge_set = {tuple(sorted(e)) for e in edges}
    for comp in components:
        best = None
        best_key = None
        for size in range(len(comp) + 1):
            for subset in combinations(comp, size):
                if any(tuple(sorted(p)) in edge_set for p in combinations(subset, 2)):
                    continue
                key = (-sum(counts[t] for t in subset), len(subset), subset)
                if best_key is None or key < best_key:
                    best_key = key
                    best = subset
        eliminated.update(set(comp) - set(best))

    retained = [t for t in speaking_ids if t not in eliminated]

    lane_of = {et.track_id: et.lane for et in expected_tracks}
    index_in = {
        et.track_id: {f: i for i, f in enumerate(et.frames)} for et in expected_tracks
    }
    all_frames = sorted({f for t in retained for f in frame_sets[t]})
    faces = []
    for f in all_frames:
        candidates = [t for t in retained if f in frame_sets[t]]
        winner = max(
            candidates,
            key=lambda t: (fused[t][index_in[t][f]] > 0, fused[t][index_in[t][f]], -t),
        )
        faces.append((f, lane_of[winner]))
    return sorted(retained), faces


def gen_random_detection_stream(
    seed: int, n_frames: int = 100, max_faces: int = 6
) -> tuple[list[list[FaceDetection]], list[ExpectedTrack]]:
    """Random lane/run layout for the tracklet-recovery oracle.

    Ground-truth tracks are the per-face appearance runs; construction keeps
    within-identity IoU high and cross-identity IoU at zero.
    """
    rng = np.random.default_rng(seed)
    n_faces = int(rng.integers(1, max_faces + 1))
    offsets = rng.integers(-2, 3, size=(n_frames, 2))
    runs: list[tuple[int, list[int]]] = []
    per_frame: list[list[FaceDetection]] = [[] for _ in range(n_frames)]
    for lane in range(n_faces):
        n_runs = int(rng.integers(1, 3))
        cursor = int(rng.integers(0, max(1, n_frames // 2)))
        for _ in range(n_runs):
            if cursor >= n_frames:
                break
            length = int(rng.integers(2, 30))
            frames = list(range(cursor, min(cursor + length, n_frames)))
            if len(frames) >= 1:
                runs.append((lane, frames))
                for f in frames:
                    per_frame[f].append(FaceDetection(f, _lane_box(lane, f, offsets)))
            cursor += length + int(rng.integers(2, 15))
    for dets in per_frame:
        dets.sort(key=lambda d: d.box.x1)
    runs.sort(key=lambda r: (r[1][0], 10 + r[0] * _LANE_X_STEP + offsets[r[1][0]][0]))
    expected = [
        ExpectedTrack(track_id, lane, frames, 0)
        for track_id, (lane, frames) in enumerate(runs)
    ]
    return per_frame, expected


# ---------------------------------------------------------------------------
# End-to-end dialogue fixtures


@dataclass
class SyntheticCase:
    seed: int
    vocab: Vocabulary
    records: list[UtteranceRecord]
    synth: SyntheticDialogue
    track_cases: dict[int, TrackCase]
    speaker_lanes: dict[int, int]


def gen_dialogue_case(
    seed: int,
    *,
    split: str = "train",
    dialogue_id: int | None = None,
    noise: float = 0.1,
    vocab: Vocabulary | None = None,
) -> SyntheticCase:
    """A full synthetic dialogue: records, embedded posteriors, track streams."""
    from .schema import Dialogue, group_dialogues
    from .timeline import build_timeline

    rng = np.random.default_rng(seed)
    vocab = vocab or Vocabulary.default()
    dialogue_id = seed if dialogue_id is None else dialogue_id
    n_utt = int(rng.integers(3, 6))
    speakers = ("Rachel", "Joey", "Monica", "Chandler", "Phoebe", "Ross")

    records = []
    cursor = 60_000 + int(rng.integers(0, 10_000))
    prev_end = None
    for uid in range(n_utt):
        n_words = int(rng.integers(2, 6))
        text = " ".join(LEXICON[int(i)] for i in rng.integers(0, len(LEXICON), n_words))
        duration = 600 + 85 * len(text) + int(rng.integers(0, 400))
        start = cursor
        if prev_end is not None and rng.random() < 0.25:
            start = prev_end - min(300, duration // 3)  # deliberate overlap
        end = start + duration
        records.append(
            UtteranceRecord(
                split=split,
                dialogue_id=dialogue_id,
                utterance_id=uid,
                speaker=speakers[uid % len(speakers)],
                emotion=EMOTIONS[int(rng.integers(0, len(EMOTIONS)))],
                sentiment=SENTIMENTS[int(rng.integers(0, len(SENTIMENTS)))],
                season=1,
                episode=1,
                start_ms=start,
                end_ms=end,
                text=text,
            )
        )
        prev_end = end
        cursor = end + int(rng.integers(0, 600))

    (dialogue,) = group_dialogues(records)
    tl = build_timeline(dialogue)
    frames = math.ceil(tl.total_ms / DEFAULT_FRAME_DURATION_MS)
    texts = [(uid, next(r.text for r in records if r.utterance_id == uid)) for uid in tl.utterance_order()]
    synth = gen_posteriors(
        texts,
        frames,
        noise,
        seed,
        vocab=vocab,
        dialogue_key=(split, dialogue_id),
    )

    track_cases = {}
    speaker_lanes = {}
    for uid, _ in texts:
        lane = int(rng.integers(0, 2))
        spec = scenario("two_faces_one_speaking", n_frames=40, speaker_lane=lane)
        track_cases[uid] = gen_tracks(spec, seed * 1009 + uid)
        speaker_lanes[uid] = lane
    return SyntheticCase(seed, vocab, records, synth, track_cases, speaker_lanes)
