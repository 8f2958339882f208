"""Format conformance of every adapter output against the core's loaders."""

import json

import numpy as np
import pytest

from meldrefine.asd import read_scores_jsonl
from meldrefine.ctcseg import PosteriorMatrix
from meldrefine.pipeline import RunConfig, localise, prepare_tracks
from meldrefine.tracks import read_detections_jsonl, write_tracks_jsonl

from meldrefine_adapters.asdscores import PHI_VALUES, export_asd_scores
from meldrefine_adapters.detections import export_detections
from meldrefine_adapters.edl import execute_edl
from meldrefine_adapters.manifest import read_adapter_manifest, write_adapter_manifest
from meldrefine_adapters.media import Audio, read_wav, read_video_frames, write_video, write_wav
from meldrefine_adapters.posteriors import AdapterError, export_posteriors


def _tracks_for(clip, tmp_path, name):
    det_path = tmp_path / f"{name}.det.jsonl"
    export_detections(clip.video_path, det_path)
    per_frame = read_detections_jsonl(det_path)
    tracks, _ = prepare_tracks(("train", 0, 0), per_frame, None, RunConfig())
    tracks_path = tmp_path / f"{name}.tracks.jsonl"
    write_tracks_jsonl(tracks_path, tracks)
    return det_path, tracks_path, tracks


class TestPosteriorConformance:
    def test_smoke_set_loads_through_primary_validator(self, smoke_clips, vocab_file, tmp_path):
        for i, clip in enumerate(smoke_clips):
            out = tmp_path / f"post{i}.ctcp"
            info = export_posteriors(
                clip.audio_path, vocab_file, out, dialogue_key=("train", i)
            )
            post = PosteriorMatrix.load(out)  # validates log-sum-exp within 1e-3
            assert post.frames == info["frames"]
            assert post.dialogue_key == ("train", i)
            assert post.frame_duration_ms == 20.0
            expected = read_wav(clip.audio_path).duration_ms / 20.0
            assert abs(post.frames - expected) <= 1 + expected * 0.01

    def test_vocab_byte_match(self, smoke_clips, vocab_file, tmp_path):
        out = tmp_path / "p.ctcp"
        export_posteriors(smoke_clips[0].audio_path, vocab_file, out)
        post = PosteriorMatrix.load(out)
        assert list(post.vocab.symbols) == json.loads(vocab_file.read_text())

    def test_silent_audio_is_blank_dominated(self, vocab_file, tmp_path):
        silent = tmp_path / "silent.wav"
        write_wav(silent, Audio(np.zeros(32_000), 16_000))
        out = tmp_path / "silent.ctcp"
        export_posteriors(silent, vocab_file, out)
        post = PosteriorMatrix.load(out)
        blank_rows = (post.logprobs.argmax(axis=1) == 0).mean()
        assert blank_rows >= 0.90

    def test_deterministic_output(self, smoke_clips, vocab_file, tmp_path):
        a = tmp_path / "a.ctcp"
        b = tmp_path / "b.ctcp"
        export_posteriors(smoke_clips[0].audio_path, vocab_file, a)
        export_posteriors(smoke_clips[0].audio_path, vocab_file, b)
        assert a.read_bytes() == b.read_bytes()


class TestDetectionConformance:
    def test_smoke_set_loads_and_counts_match(self, smoke_clips, tmp_path):
        for i, clip in enumerate(smoke_clips):
            out = tmp_path / f"det{i}.jsonl"
            info = export_detections(clip.video_path, out)
            per_frame = read_detections_jsonl(out)
            assert info["frames"] == clip.n_frames
            assert len(per_frame) == clip.n_frames
            n_expected = len(clip.face_lanes)
            exact = sum(1 for dets in per_frame if len(dets) == n_expected)
            assert exact >= 0.95 * clip.n_frames

    def test_all_dark_video_has_no_boxes(self, tmp_path):
        video = tmp_path / "dark.avi"
        write_video(video, [np.zeros((64, 64, 3), np.uint8) for _ in range(10)], 25.0)
        out = tmp_path / "dark.jsonl"
        export_detections(video, out)
        assert all(not d for d in read_detections_jsonl(out))

    def test_deterministic_output(self, smoke_clips, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        export_detections(smoke_clips[0].video_path, a)
        export_detections(smoke_clips[0].video_path, b)
        assert a.read_bytes() == b.read_bytes()


class TestAsdScoreConformance:
    def test_smoke_set_scores_load_with_exact_phi_set(self, smoke_clips, tmp_path):
        for i, clip in enumerate(smoke_clips):
            _, tracks_path, tracks = _tracks_for(clip, tmp_path, f"c{i}")
            out = tmp_path / f"scores{i}.jsonl"
            export_asd_scores(tracks_path, clip.video_path, clip.audio_path, out)
            scores = read_scores_jsonl(out)
            assert set(scores) == {t.track_id for t in tracks}
            for t in tracks:
                per_phi = scores[t.track_id]
                assert sorted(per_phi) == sorted(PHI_VALUES)
                assert all(len(arr) == len(t.entries) for arr in per_phi.values())

    def test_scores_feed_core_localisation(self, smoke_clips, tmp_path):
        clip = smoke_clips[0]
        det_path, tracks_path, _ = _tracks_for(clip, tmp_path, "loc")
        out = tmp_path / "loc.scores.jsonl"
        export_asd_scores(tracks_path, clip.video_path, clip.audio_path, out)
        per_frame = read_detections_jsonl(det_path)
        result = localise(("train", 0, 0), per_frame, read_scores_jsonl(out), None, RunConfig())
        assert result.status in ("aligned", "no_active_speaker")
        if result.status == "aligned":
            frames = [f.frame for f in result.result.faces]
            assert frames == sorted(frames)

    def test_audio_ratio_violation_rejected(self, smoke_clips, tmp_path):
        clip = smoke_clips[0]
        _, tracks_path, _ = _tracks_for(clip, tmp_path, "ratio")
        half = tmp_path / "half.wav"
        full = read_wav(clip.audio_path)
        write_wav(half, Audio(full.samples[: len(full.samples) // 2], full.sample_rate))
        with pytest.raises(AdapterError, match="4:1"):
            export_asd_scores(tracks_path, clip.video_path, half, tmp_path / "x.jsonl")

    def test_fps_contract_violation_rejected(self, smoke_clips, tmp_path):
        clip = smoke_clips[0]
        _, tracks_path, _ = _tracks_for(clip, tmp_path, "fps")
        slow = tmp_path / "slow.avi"
        frames = [f for _, f in read_video_frames(clip.video_path) if f is not None]
        write_video(slow, frames, 30.0)
        with pytest.raises(AdapterError, match="fps"):
            export_asd_scores(tracks_path, slow, clip.audio_path, tmp_path / "y.jsonl")


class TestEdlExecution:
    def _sources(self, smoke_clips, tmp_path):
        src = tmp_path / "sources"
        src.mkdir(exist_ok=True)
        for uid, clip in enumerate(smoke_clips):
            (src / f"train_0_{uid}.wav").write_bytes(clip.audio_path.read_bytes())
            (src / f"train_0_{uid}.avi").write_bytes(clip.video_path.read_bytes())
        return src

    def _edl_row(self, uid, pieces):
        return {
            "split": "train",
            "dialogue_id": 0,
            "utterance_id": uid,
            "status": "aligned",
            "global_start_ms": 0,
            "global_end_ms": sum(p["end_ms"] - p["start_ms"] for p in pieces),
            "confidence": -0.3,
            "pieces": pieces,
        }

    def test_cut_boundaries_within_one_frame(self, smoke_clips, tmp_path):
        src = self._sources(smoke_clips, tmp_path)
        edl = tmp_path / "edl.jsonl"
        pieces = [
            {"source_utterance_id": 0, "start_ms": 1000, "end_ms": 3000},
            {"source_utterance_id": None, "start_ms": 0, "end_ms": 250},
            {"source_utterance_id": 1, "start_ms": 500, "end_ms": 1500},
        ]
        edl.write_text(json.dumps(self._edl_row(0, pieces)) + "\n")
        report = execute_edl(edl, src, tmp_path / "cuts")
        assert report.executed == [("train", 0, 0)]
        audio = read_wav(tmp_path / "cuts/train/0/0/audio.wav")
        assert abs(audio.duration_ms - 3250) <= 40  # one 25 fps frame
        video_frames = [f for _, f in read_video_frames(tmp_path / "cuts/train/0/0/video.avi")]
        assert abs(len(video_frames) - round(3250 / 40)) <= 1

    def test_empty_edl_no_outputs(self, smoke_clips, tmp_path):
        src = self._sources(smoke_clips, tmp_path)
        edl = tmp_path / "empty.jsonl"
        edl.write_text("")
        report = execute_edl(edl, src, tmp_path / "cuts2")
        assert report.executed == [] and report.skipped == []
        assert not (tmp_path / "cuts2").exists()

    def test_missing_source_reported_skip(self, smoke_clips, tmp_path):
        src = self._sources(smoke_clips, tmp_path)
        edl = tmp_path / "missing.jsonl"
        pieces = [{"source_utterance_id": 99, "start_ms": 0, "end_ms": 1000}]
        edl.write_text(json.dumps(self._edl_row(7, pieces)) + "\n")
        report = execute_edl(edl, src, tmp_path / "cuts3")
        assert report.executed == []
        assert report.skipped[0][0] == ("train", 0, 7)

    def test_corrupted_source_reported_skip(self, smoke_clips, tmp_path):
        src = self._sources(smoke_clips, tmp_path)
        (src / "train_0_0.wav").write_bytes(b"not a wav file at all")
        edl = tmp_path / "corrupt.jsonl"
        pieces = [{"source_utterance_id": 0, "start_ms": 0, "end_ms": 1000}]
        edl.write_text(json.dumps(self._edl_row(0, pieces)) + "\n")
        report = execute_edl(edl, src, tmp_path / "cuts5")
        assert report.executed == []
        key, reason = report.skipped[0]
        assert key == ("train", 0, 0)
        assert "unreadable" in reason

    def test_non_aligned_rows_ignored(self, smoke_clips, tmp_path):
        src = self._sources(smoke_clips, tmp_path)
        edl = tmp_path / "drop.jsonl"
        row = self._edl_row(1, [])
        row["status"] = "dropped_short"
        edl.write_text(json.dumps(row) + "\n")
        report = execute_edl(edl, src, tmp_path / "cuts4")
        assert report.executed == [] and report.skipped == []


class TestAdapterManifest:
    def test_round_trip_and_contract_fields(self, tmp_path):
        path = tmp_path / "adapter_manifest.json"
        write_adapter_manifest(
            path,
            asr_model="random-projection-ctc",
            detector_model="bright-region-contours",
            asd_model="motion-audio-synchrony",
        )
        payload = read_adapter_manifest(path)
        assert payload["audio_frames_per_video_frame"] == 4
        assert payload["frame_duration_ms"] == 20.0
        assert payload["asr_model"] == "random-projection-ctc"
