import json
import math

import pytest

from meldrefine.asd import write_cuts_json, write_scores_jsonl
from meldrefine.cli import main as cli_main
from meldrefine.ctcseg import STATUS_ALIGNED, STATUS_DEGENERATE
from meldrefine.pipeline import (
    ManifestEntry,
    RunConfig,
    ValidationError,
    build_manifest,
    localise,
    read_manifest,
    realign,
    stats,
    write_manifest,
)
from meldrefine.schema import format_timestamp, group_dialogues
from meldrefine.synth import gen_dialogue_case, gen_posteriors, gen_tracks, scenario
from meldrefine.synthcheck import run_synth_pipeline, synth_check
from meldrefine.timeline import build_timeline
from meldrefine.tracks import write_detections_jsonl

from fixtures_meld import MELD_HEADER, make_record, table2_csv


def records_to_csv(records) -> str:
    lines = [MELD_HEADER]
    for i, r in enumerate(records):
        text = '"' + r.text.replace('"', '""') + '"'
        lines.append(
            f"{i},{text},{r.speaker},{r.emotion},{r.sentiment},{r.dialogue_id},"
            f"{r.utterance_id},{r.season},{r.episode},"
            f"{format_timestamp(r.start_ms)},{format_timestamp(r.end_ms)}"
        )
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="module")
def config():
    return RunConfig()


class TestRealign:
    def test_table2_with_embedded_posteriors(self, table2_dialogue, config):
        tl = build_timeline(table2_dialogue)
        frames = math.ceil(tl.total_ms / 20.0)
        texts = [
            (uid, next(u.text for u in table2_dialogue.utterances if u.utterance_id == uid))
            for uid in tl.utterance_order()
        ]
        sd = gen_posteriors(texts, frames, 0.0, 0, dialogue_key=("train", 0))
        result = realign(table2_dialogue.utterances, {("train", 0): sd.posterior}, config)
        assert [n.status for n in result.notes] == ["ok"]
        assert all(row.status == STATUS_ALIGNED for row in result.rows)
        for row in result.rows:
            first, last = sd.true_spans[row.utterance_id]
            assert abs(row.global_start_ms / 20.0 - first) <= 1
            assert abs(row.global_end_ms / 20.0 - (last + 1)) <= 1
            assert row.pieces

    def test_missing_posterior_degrades_dialogue(self, config):
        records = [make_record(0, 0, 2000, text="HELLO")]
        result = realign(records, {}, config)
        assert result.notes[0].status == "missing_posterior"
        assert result.rows[0].status == STATUS_DEGENERATE
        assert result.fatal

    def test_empty_transcript_dialogue(self, config):
        records = [make_record(0, 0, 2000, text="123 456")]
        sd = gen_posteriors([(0, "X")], 100, 0.0, 0)
        result = realign(records, {("train", 0): sd.posterior}, config)
        assert result.notes[0].status == "empty_transcript"
        assert result.rows[0].status == STATUS_DEGENERATE

    def test_single_char_utterance_dropped_short(self, config):
        records = [
            make_record(0, 0, 1000, text="I"),
            make_record(1, 1100, 4000, text="WELL THAT IS REALLY SOMETHING ELSE"),
        ]
        (dialogue,) = group_dialogues(records)
        tl = build_timeline(dialogue)
        frames = math.ceil(tl.total_ms / 20.0)
        sd = gen_posteriors([(0, "I"), (1, records[1].text)], frames, 0.0, 1, dialogue_key=("train", 0))
        result = realign(records, {("train", 0): sd.posterior}, config)
        by_id = {r.utterance_id: r for r in result.rows}
        assert by_id[0].status == "dropped_short"  # one char -> one frame -> 20 ms
        assert by_id[1].status == STATUS_ALIGNED
        assert by_id[0].pieces == []

    def test_middle_utterance_normalizing_empty(self, config):
        records = [
            make_record(0, 0, 2500, text="HELLO THERE FRIEND"),
            make_record(1, 2600, 3400, text="30"),  # digits only -> empty
            make_record(2, 3500, 6000, text="WELL THAT IS SOMETHING"),
        ]
        (dialogue,) = group_dialogues(records)
        tl = build_timeline(dialogue)
        frames = math.ceil(tl.total_ms / 20.0)
        texts = [(r.utterance_id, r.text) for r in records]
        sd = gen_posteriors(texts, frames, 0.0, 3, dialogue_key=("train", 0))
        result = realign(records, {("train", 0): sd.posterior}, config)
        by_id = {r.utterance_id: r for r in result.rows}
        assert by_id[1].status == STATUS_DEGENERATE
        assert by_id[0].status == STATUS_ALIGNED
        assert by_id[2].status == STATUS_ALIGNED
        assert result.notes[0].status == "ok"

    def test_degenerate_swallowed_utterance_row(self, config):
        records = [
            make_record(0, 0, 3000, text="HELLO THERE FRIEND"),
            make_record(1, 100, 2000, text="YES"),
        ]
        (dialogue,) = group_dialogues(records)
        tl = build_timeline(dialogue)
        assert tl.degenerate == [1]
        frames = math.ceil(tl.total_ms / 20.0)
        sd = gen_posteriors([(0, records[0].text)], frames, 0.0, 2, dialogue_key=("train", 0))
        result = realign(records, {("train", 0): sd.posterior}, config)
        by_id = {r.utterance_id: r for r in result.rows}
        assert by_id[1].status == STATUS_DEGENERATE
        assert by_id[0].status == STATUS_ALIGNED

    def test_edl_pieces_stay_within_source_clips(self, config):
        for seed in range(6):
            case = gen_dialogue_case(seed, noise=0.1)
            key = (case.records[0].split, case.records[0].dialogue_id)
            result = realign(case.records, {key: case.synth.posterior}, config)
            lengths = {
                r.utterance_id: min(r.end_ms - r.start_ms, 45_000) for r in case.records
            }
            for row in result.rows:
                for piece in row.pieces:
                    if piece.source_utterance_id is None:
                        continue
                    assert 0 <= piece.start_ms < piece.end_ms
                    assert piece.end_ms <= lengths[piece.source_utterance_id]

    def test_worker_count_does_not_change_output(self, config):
        cases = [gen_dialogue_case(s, dialogue_id=s, noise=0.1) for s in range(3)]
        records = [r for c in cases for r in c.records]
        posteriors = {("train", c.records[0].dialogue_id): c.synth.posterior for c in cases}
        serial = realign(records, posteriors, config, workers=1)
        parallel = realign(records, posteriors, config, workers=2)
        assert [r.to_json_dict() for r in serial.rows] == [r.to_json_dict() for r in parallel.rows]


class TestLocalise:
    def test_single_positive_face(self, config):
        case = gen_tracks(scenario("two_faces_one_speaking", speaker_lane=0), 3)
        result = localise(("train", 0, 0), case.per_frame, case.scores, case.cuts, config)
        assert result.status == STATUS_ALIGNED
        got = [(f.frame, round((f.box.x1 - 10) / 140)) for f in result.result.faces]
        assert got == case.expected_faces
        assert result.result.retained == case.expected_retained

    def test_all_silent_yields_no_active_speaker(self, config):
        case = gen_tracks(scenario("all_silent"), 4)
        result = localise(("train", 0, 0), case.per_frame, case.scores, case.cuts, config)
        assert result.status == "no_active_speaker"

    def test_no_detections_at_all(self, config):
        result = localise(("train", 0, 0), [[] for _ in range(5)], {}, None, config)
        assert result.status == "no_active_speaker"

    def test_triangle_conflict_resolved(self, config):
        case = gen_tracks(scenario("triangle_equal", n_frames=30), 6)
        result = localise(("train", 0, 0), case.per_frame, case.scores, case.cuts, config)
        assert result.result.retained == case.expected_retained == [0]

    def test_cut_straddle_merges(self, config):
        case = gen_tracks(scenario("cut_straddle", n_frames=40), 7)
        result = localise(("train", 0, 0), case.per_frame, case.scores, case.cuts, config)
        assert result.result.retained == [0, 1]
        assert [f.frame for f in result.result.faces] == list(range(40))

    def test_score_length_mismatch_names_track(self, config):
        case = gen_tracks(scenario("two_faces_one_speaking"), 8)
        bad = {tid: {phi: arr[:-1] for phi, arr in per.items()} for tid, per in case.scores.items()}
        with pytest.raises(ValidationError, match="track 0"):
            localise(("train", 0, 0), case.per_frame, bad, case.cuts, config)

    def test_missing_scores_names_track(self, config):
        case = gen_tracks(scenario("two_faces_one_speaking"), 9)
        scores = dict(case.scores)
        scores.pop(1)
        with pytest.raises(ValidationError, match="track 1"):
            localise(("train", 0, 0), case.per_frame, scores, case.cuts, config)

    def test_crop_references_follow_convention(self, config):
        case = gen_tracks(scenario("two_faces_one_speaking", speaker_lane=1), 10)
        result = localise(("dev", 3, 7), case.per_frame, case.scores, case.cuts, config)
        face = result.result.faces[0]
        assert face.crop == f"dev/3/7/{face.frame:06d}.png"


class TestManifest:
    def _synthetic_manifest(self, n=3, seed=0):
        cases = [gen_dialogue_case(seed + i, dialogue_id=i, noise=0.0) for i in range(n)]
        records = [r for c in cases for r in c.records]
        posteriors = {("train", c.records[0].dialogue_id): c.synth.posterior for c in cases}
        config = RunConfig()
        rr = realign(records, posteriors, config)
        loc = {}
        for c in cases:
            for r in c.records:
                tc = c.track_cases[r.utterance_id]
                loc[r.key] = localise(r.key, tc.per_frame, tc.scores, tc.cuts, config)
        return records, rr, loc

    def test_every_key_exactly_once(self):
        records, rr, loc = self._synthetic_manifest()
        entries = build_manifest(records, rr.rows, loc)
        assert sorted(e.key for e in entries) == sorted(r.key for r in records)

    def test_reference_invariants(self):
        records, rr, loc = self._synthetic_manifest()
        entries = build_manifest(records, rr.rows, loc)
        for e in entries:
            if e.status == STATUS_ALIGNED:
                assert e.audio_ref and e.face_ref and e.face_count > 0
            else:
                assert e.face_ref is None

    def test_missing_localisation_for_aligned_is_error(self):
        records, rr, loc = self._synthetic_manifest(n=1)
        aligned_keys = [r.key for r in rr.rows if r.status == STATUS_ALIGNED]
        partial = {k: v for k, v in loc.items() if k != aligned_keys[0]}
        with pytest.raises(ValidationError, match="localisation"):
            build_manifest(records, rr.rows, partial)

    def test_round_trip_file(self, tmp_path):
        records, rr, loc = self._synthetic_manifest(n=2)
        entries = build_manifest(records, rr.rows, loc)
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, entries)
        assert read_manifest(path) == sorted(entries, key=lambda e: e.key)


def make_entry(uid, status="aligned", emotion="neutral", speaker="Ross", split="train", dia=0):
    aligned = status == "aligned"
    return ManifestEntry(
        split, dia, uid, status,
        0, 1000,
        f"{split}/{dia}/{uid}/audio.wav" if aligned else None,
        f"{split}/{dia}/{uid}/" if aligned else None,
        10 if aligned else 0,
        emotion, speaker,
    )


class TestStats:
    def test_full_retention(self):
        entries = [make_entry(i) for i in range(10)]
        report = stats(entries)
        assert report.overall == (10, 10)
        assert report.retention["train"] == (10, 10)
        assert report.dialogue_loss["train"] == (0, 1)
        assert "retention overall: 10/10 (100.00%)" in report.render_text()

    def test_neutral_drop_counts(self):
        entries = [make_entry(i, emotion="neutral") for i in range(30)]
        entries.append(make_entry(30, status="dropped_short", emotion="neutral"))
        report = stats(entries)
        assert report.emotion_table["neutral"]["train"] == (30, 31)
        assert "30 (31)" in report.render_text()

    def test_speaker_pooling(self):
        entries = [make_entry(0, speaker="Ross"), make_entry(1, speaker="Gunther")]
        report = stats(entries)
        assert report.speaker_table["Ross"]["train"] == (1, 1)
        assert report.speaker_table["others"]["train"] == (1, 1)

    def test_dialogue_loss_fraction(self):
        entries = [
            make_entry(0, dia=0),
            make_entry(1, dia=0, status="no_active_speaker"),
            make_entry(0, dia=1),
        ]
        report = stats(entries)
        assert report.dialogue_loss["train"] == (1, 2)


class TestDeterminismAndSynthCheck:
    def test_pipeline_runs_byte_identical(self):
        config = RunConfig()
        first, _ = run_synth_pipeline(3, 0.1, 11, config)
        second, _ = run_synth_pipeline(3, 0.1, 11, config)
        assert first == second

    def test_small_synth_check_passes(self, tmp_path):
        result = synth_check(n_dialogues=4, noise=0.1, seed=2, out_dir=tmp_path)
        assert result.recovered >= 3
        assert result.deterministic
        assert result.passed
        assert (tmp_path / "manifest.jsonl").exists()
        report = json.loads((tmp_path / "synth_check_report.json").read_text())
        assert report["recovered"] == result.recovered


class TestCli:
    def test_full_file_level_run(self, tmp_path, capsys):
        cases = [gen_dialogue_case(s, dialogue_id=s, noise=0.0) for s in range(2)]
        records = [r for c in cases for r in c.records]

        records_csv = tmp_path / "train.csv"
        records_csv.write_text(records_to_csv(records), encoding="utf-8")
        post_dir = tmp_path / "posteriors"
        post_dir.mkdir()
        for c in cases:
            c.synth.posterior.save(post_dir / f"train_{c.records[0].dialogue_id}.ctcp")

        out_dir = tmp_path / "realign"
        rc = cli_main([
            "realign",
            "--records", str(records_csv),
            "--split", "train",
            "--overrides", "none",
            "--posteriors", str(post_dir),
            "--out-dir", str(out_dir),
        ])
        assert rc == 0
        assert (out_dir / "edl.jsonl").exists()
        assert (out_dir / "timelines.jsonl").exists()

        asd_dir = tmp_path / "asd"
        asd_dir.mkdir()
        for c in cases:
            for r in c.records:
                tc = c.track_cases[r.utterance_id]
                det = tmp_path / f"det_{r.dialogue_id}_{r.utterance_id}.jsonl"
                sco = tmp_path / f"sco_{r.dialogue_id}_{r.utterance_id}.jsonl"
                cut = tmp_path / f"cut_{r.dialogue_id}_{r.utterance_id}.json"
                write_detections_jsonl(det, tc.per_frame)
                write_scores_jsonl(sco, tc.scores)
                write_cuts_json(cut, tc.cuts)
                rc = cli_main([
                    "localise",
                    "--detections", str(det),
                    "--scores", str(sco),
                    "--cuts", str(cut),
                    "--split", r.split,
                    "--dialogue-id", str(r.dialogue_id),
                    "--utterance-id", str(r.utterance_id),
                    "--out", str(asd_dir / f"{r.dialogue_id}_{r.utterance_id}.json"),
                ])
                assert rc == 0

        manifest_path = tmp_path / "manifest.jsonl"
        rc = cli_main([
            "manifest",
            "--records", str(records_csv),
            "--split", "train",
            "--overrides", "none",
            "--edl", str(out_dir / "edl.jsonl"),
            "--asd-dir", str(asd_dir),
            "--out", str(manifest_path),
            "--meta-out", str(tmp_path / "meta.json"),
        ])
        assert rc == 0
        entries = read_manifest(manifest_path)
        assert len(entries) == len(records)

        capsys.readouterr()  # drain output of the earlier commands
        rc = cli_main(["stats", "--manifest", str(manifest_path), "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["overall"][1] == len(records)

    def test_tracks_only_emission(self, tmp_path):
        case = gen_tracks(scenario("two_faces_one_speaking"), 1)
        det = tmp_path / "det.jsonl"
        write_detections_jsonl(det, case.per_frame)
        tracks_out = tmp_path / "tracks.jsonl"
        rc = cli_main([
            "localise",
            "--detections", str(det),
            "--split", "train",
            "--dialogue-id", "0",
            "--utterance-id", "0",
            "--tracks-only",
            "--tracks-out", str(tracks_out),
        ])
        assert rc == 0
        from meldrefine.tracks import read_tracks_jsonl

        tracks = read_tracks_jsonl(tracks_out)
        assert len(tracks) == 2

    def test_synth_check_command(self, tmp_path, capsys):
        rc = cli_main([
            "synth-check", "--dialogues", "3", "--seed", "4", "--out-dir", str(tmp_path / "sc"),
        ])
        out = capsys.readouterr().out
        assert rc == 0
        assert "PASS" in out

    def test_timelines_only_needs_no_posteriors(self, tmp_path):
        records_csv = tmp_path / "train.csv"
        records_csv.write_text(table2_csv(), encoding="utf-8")
        out_dir = tmp_path / "tl"
        rc = cli_main([
            "realign",
            "--records", str(records_csv),
            "--split", "train",
            "--overrides", "none",
            "--out-dir", str(out_dir),
            "--timelines-only",
        ])
        assert rc == 0
        lines = (out_dir / "timelines.jsonl").read_text().splitlines()
        assert len(lines) == 1
        timeline = json.loads(lines[0])
        assert timeline["total_ms"] == 14806
        assert not (out_dir / "edl.jsonl").exists()

    def test_realign_missing_posterior_nonzero_exit(self, tmp_path):
        records_csv = tmp_path / "train.csv"
        records_csv.write_text(table2_csv(), encoding="utf-8")
        post_dir = tmp_path / "posteriors"
        post_dir.mkdir()
        rc = cli_main([
            "realign",
            "--records", str(records_csv),
            "--split", "train",
            "--overrides", "none",
            "--posteriors", str(post_dir),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert rc == 1
