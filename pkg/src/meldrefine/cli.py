"""Command-line entry points: realign, localise, manifest, stats, synth-check."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__, schema
from .asd import read_cuts_json, read_scores_jsonl
from .ctcseg import PosteriorMatrix
from .pipeline import (
    LocaliseResult,
    RunConfig,
    build_manifest,
    localise,
    prepare_tracks,
    read_edl_jsonl,
    read_manifest,
    realign,
    stats,
    write_edl_jsonl,
    write_localise_json,
    write_manifest,
    write_run_meta,
)
from .synthcheck import synth_check
from .tracks import read_detections_jsonl, write_tracks_jsonl


@dataclass
class PosteriorDirLoader:
    """Lazy loader keyed by the dialogue keys in the file headers."""

    index: dict

    @classmethod
    def scan(cls, directory: str | Path) -> "PosteriorDirLoader":
        index = {}
        for path in sorted(Path(directory).glob("*.ctcp")):
            key = PosteriorMatrix.load_key(path)
            if key is None:
                raise SystemExit(f"{path}: posterior file has no dialogue key")
            if key in index:
                raise SystemExit(f"{path}: duplicate posteriors for dialogue {key}")
            index[key] = str(path)
        return cls(index)

    def __call__(self, key):
        path = self.index.get(key)
        return PosteriorMatrix.load(path) if path else None


def _load_records(args) -> list:
    payload = Path(args.records).read_text(encoding="utf-8")
    records, row_errors = schema.parse_records(payload, args.split)
    for err in row_errors:
        print(f"warning: {args.records} row {err.row}: {err.field}: {err.message}", file=sys.stderr)
    if args.overrides == "builtin":
        overrides = schema.default_overrides()
    elif args.overrides == "none":
        overrides = []
    else:
        overrides = schema.load_overrides(args.overrides)
    records, report = schema.apply_overrides(records, overrides)
    for key, action in report.dangling:
        print(f"warning: dangling override {action} for {key}", file=sys.stderr)
    return records


def _config_from(args) -> RunConfig:
    kwargs = {}
    for name in ("theta", "min_span_ms", "min_confidence", "exact_group_limit"):
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    if getattr(args, "no_cut_fallback", False):
        kwargs["cut_fallback"] = False
    return RunConfig(**kwargs)


def _cmd_realign(args) -> int:
    records = _load_records(args)
    config = _config_from(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.timelines_only:
        # Emitted before any posteriors exist: the concatenation adapter needs
        # the timeline to build the dialogue audio the ASR model consumes.
        from .schema import group_dialogues
        from .timeline import build_timeline

        with open(out / "timelines.jsonl", "w", encoding="utf-8") as f:
            for dialogue in group_dialogues(records):
                tl = build_timeline(dialogue)
                f.write(json.dumps(tl.to_json_dict(), sort_keys=True) + "\n")
        print(f"wrote timelines for {len(set((r.split, r.dialogue_id) for r in records))} dialogues -> {out}")
        return 0

    if not args.posteriors:
        build_parser().error("realign requires --posteriors unless --timelines-only")
    loader = PosteriorDirLoader.scan(args.posteriors)
    result = realign(records, loader, config, workers=args.workers)

    write_edl_jsonl(out / "edl.jsonl", result.rows)
    with open(out / "timelines.jsonl", "w", encoding="utf-8") as f:
        for key in sorted(result.timelines):
            f.write(json.dumps(result.timelines[key].to_json_dict(), sort_keys=True) + "\n")
    report = {
        "dialogues": [
            {
                "key": list(n.key),
                "status": n.status,
                "detail": n.detail,
                "degenerate": n.degenerate,
                "dropped_chars": n.dropped_chars,
            }
            for n in result.notes
        ]
    }
    (out / "realign_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    failures = [n for n in result.notes if n.status != "ok"]
    for n in failures:
        print(f"error: dialogue {n.key}: {n.status}: {n.detail}", file=sys.stderr)
    print(f"realigned {len(result.notes) - len(failures)}/{len(result.notes)} dialogues -> {out}")
    return 1 if failures else 0


def _cmd_localise(args) -> int:
    config = _config_from(args)
    per_frame = read_detections_jsonl(args.detections)
    cuts = read_cuts_json(args.cuts) if args.cuts else None
    key = (args.split, args.dialogue_id, args.utterance_id)

    if args.tracks_only:
        tracks, _ = prepare_tracks(key, per_frame, cuts, config)
        write_tracks_jsonl(args.tracks_out or "tracks.jsonl", tracks)
        print(f"emitted {len(tracks)} tracks")
        return 0

    scores = read_scores_jsonl(args.scores)
    result = localise(key, per_frame, scores, cuts, config)
    if args.tracks_out:
        write_tracks_jsonl(args.tracks_out, result.tracks)
    write_localise_json(args.out, result)
    n_faces = len(result.result.faces) if result.result else 0
    print(f"{key}: {result.status} ({n_faces} faces)")
    return 0


def _cmd_manifest(args) -> int:
    records = _load_records(args)
    edl_rows = read_edl_jsonl(args.edl)
    localise_results = {}
    for path in sorted(Path(args.asd_dir).glob("*.json")):
        obj = json.loads(path.read_text(encoding="utf-8"))
        key = (obj["split"], obj["dialogue_id"], obj["utterance_id"])
        localise_results[key] = _localise_result_from_json(obj)
    entries = build_manifest(records, edl_rows, localise_results)
    write_manifest(args.out, entries)
    if args.meta_out:
        write_run_meta(args.meta_out, _config_from(args))
    print(f"wrote {len(entries)} manifest entries -> {args.out}")
    return 0


def _localise_result_from_json(obj: dict) -> LocaliseResult:
    from .asd import ActiveSpeakerResult, FaceRef
    from .tracks import Box

    faces = [
        FaceRef(
            f["frame"],
            Box(f["x1"], f["y1"], f["x2"], f["y2"]),
            f.get("crop"),
            f["track_id"],
            bool(f["speaking"]),
        )
        for f in obj.get("faces", [])
    ]
    result = None
    if obj["status"] == "aligned":
        result = ActiveSpeakerResult(list(obj.get("retained", [])), faces)
    key = (obj["split"], obj["dialogue_id"], obj["utterance_id"])
    return LocaliseResult(key, obj["status"], result, [], [])


def _cmd_stats(args) -> int:
    entries = read_manifest(args.manifest)
    report = stats(entries)
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.render_text(), end="")
    return 0


def _cmd_synth_check(args) -> int:
    result = synth_check(
        n_dialogues=args.dialogues,
        noise=args.noise,
        seed=args.seed,
        config=_config_from(args),
        out_dir=args.out_dir,
    )
    for line in result.summary_lines():
        print(line)
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meldrefine",
        description="Realign MELD-style utterance cuts and localise the uttering speaker.",
    )
    parser.add_argument("--version", action="version", version=f"meldrefine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_records_args(p):
        p.add_argument("--records", required=True, help="split CSV file")
        p.add_argument("--split", required=True, choices=schema.SPLITS)
        p.add_argument(
            "--overrides",
            default="builtin",
            help="override file path, or 'builtin' (default) or 'none'",
        )

    p = sub.add_parser("realign", help="realign all dialogues of one split")
    add_records_args(p)
    p.add_argument("--posteriors", help="directory of .ctcp files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-span-ms", type=int, default=None)
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--timelines-only",
        action="store_true",
        help="emit timelines.jsonl for the audio-concatenation adapter and stop",
    )
    p.set_defaults(func=_cmd_realign)

    p = sub.add_parser("localise", help="localise the active speaker in one video")
    p.add_argument("--detections", required=True, help="detections JSON Lines")
    p.add_argument("--scores", help="scores JSON Lines (required unless --tracks-only)")
    p.add_argument("--cuts", help="camera cuts JSON")
    p.add_argument("--split", required=True, choices=schema.SPLITS)
    p.add_argument("--dialogue-id", type=int, required=True)
    p.add_argument("--utterance-id", type=int, required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--no-cut-fallback", action="store_true")
    p.add_argument("--exact-group-limit", type=int, default=None)
    p.add_argument("--out", help="result JSON (required unless --tracks-only)")
    p.add_argument("--tracks-out", help="also write the post-split track list")
    p.add_argument("--tracks-only", action="store_true", help="stop after track emission")
    p.set_defaults(func=_cmd_localise)

    p = sub.add_parser("manifest", help="merge realignment and localisation outputs")
    add_records_args(p)
    p.add_argument("--edl", required=True)
    p.add_argument("--asd-dir", required=True, help="directory of localise result JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--meta-out")
    p.set_defaults(func=_cmd_manifest)

    p = sub.add_parser("stats", help="retention distributions over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("synth-check", help="run the synthetic end-to-end acceptance fixture")
    p.add_argument("--dialogues", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_synth_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "localise" and not args.tracks_only:
        if not args.scores or not args.out:
            build_parser().error("localise requires --scores and --out unless --tracks-only")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
