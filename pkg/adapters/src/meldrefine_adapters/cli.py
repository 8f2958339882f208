"""Adapter CLI, mirroring the core's subcommand naming with an adapter- prefix."""

from __future__ import annotations

import argparse
import json
import sys

from .asdscores import SynchronyBackend, export_asd_scores
from .concat import export_concat_audio
from .detections import BrightRegionBackend, CascadeBackend, export_detections
from .edl import execute_edl
from .manifest import write_adapter_manifest
from .media import make_smoke_clip
from .posteriors import RandomProjectionBackend, Wav2Vec2Backend, export_posteriors


def _cmd_posteriors(args) -> int:
    if args.checkpoint:
        backend = Wav2Vec2Backend(args.checkpoint)
    else:
        backend = RandomProjectionBackend(seed=args.seed)
    key = (args.split, args.dialogue_id) if args.split is not None else None
    info = export_posteriors(args.audio, args.vocab, args.out, dialogue_key=key, backend=backend)
    print(json.dumps(info))
    return 0


def _cmd_detections(args) -> int:
    if args.cascade:
        backend = CascadeBackend(args.cascade)
    else:
        backend = BrightRegionBackend(threshold=args.threshold)
    info = export_detections(args.video, args.out, backend=backend)
    print(json.dumps(info))
    return 0


def _cmd_asd(args) -> int:
    info = export_asd_scores(
        args.tracks, args.video, args.audio, args.out, backend=SynchronyBackend()
    )
    print(json.dumps(info))
    return 0


def _cmd_concat(args) -> int:
    report = export_concat_audio(args.timelines, args.sources, args.out_dir)
    print(
        f"wrote {len(report.written)} dialogue audios, skipped {len(report.skipped)}"
        + (f", padded {report.padded_sources} short sources" if report.padded_sources else "")
    )
    return 0


def _cmd_edl(args) -> int:
    report = execute_edl(args.edl, args.sources, args.out_dir, cut_video=not args.audio_only)
    for key, reason in report.skipped:
        print(f"warning: skipped {key}: {reason}", file=sys.stderr)
    print(f"executed {len(report.executed)} cuts, skipped {len(report.skipped)}")
    return 0


def _cmd_smoke(args) -> int:
    for i in range(args.clips):
        clip = make_smoke_clip(
            f"{args.out_dir}/clip{i}",
            seed=args.seed + i,
            n_faces=2 + i % 2,
            speaking_lane=i % 2,
        )
        print(f"{clip.video_path} {clip.audio_path} ({clip.n_frames} frames)")
    return 0


def _cmd_manifest(args) -> int:
    write_adapter_manifest(
        args.out,
        asr_model=args.asr_model,
        detector_model=args.detector_model,
        asd_model=args.asd_model,
    )
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meldrefine-adapters",
        description="Produce meldrefine's opaque inputs from media, and execute EDLs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("adapter-posteriors", help="audio -> CTCP0001 posterior matrix")
    p.add_argument("--audio", required=True, help="mono WAV")
    p.add_argument("--vocab", required=True, help="vocabulary JSON (blank first)")
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--dialogue-id", type=int, default=0)
    p.add_argument("--checkpoint", help="local pretrained CTC checkpoint directory")
    p.add_argument("--seed", type=int, default=0, help="offline backend seed")
    p.set_defaults(func=_cmd_posteriors)

    p = sub.add_parser("adapter-detections", help="video -> detections JSON Lines")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cascade", help="OpenCV cascade XML (optional)")
    p.add_argument("--threshold", type=int, default=180, help="bright-region threshold")
    p.set_defaults(func=_cmd_detections)

    p = sub.add_parser("adapter-asd", help="tracks + media -> per-phi scores JSON Lines")
    p.add_argument("--tracks", required=True, help="post-split tracks JSON Lines from the core")
    p.add_argument("--video", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_asd)

    p = sub.add_parser(
        "adapter-concat", help="build concatenated dialogue audio from core timelines"
    )
    p.add_argument("--timelines", required=True, help="timelines.jsonl from `realign --timelines-only`")
    p.add_argument("--sources", required=True, help="dir of <split>_<dia>_<utt>.wav")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_concat)

    p = sub.add_parser("adapter-edl", help="execute an EDL against source clips")
    p.add_argument("--edl", required=True)
    p.add_argument("--sources", required=True, help="dir of <split>_<dia>_<utt>.wav/.avi")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--audio-only", action="store_true")
    p.set_defaults(func=_cmd_edl)

    p = sub.add_parser("adapter-smoke", help="generate synthetic smoke clips")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--clips", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_smoke)

    p = sub.add_parser("adapter-manifest", help="record model ids and strides for a run")
    p.add_argument("--out", required=True)
    p.add_argument("--asr-model", default="random-projection-ctc")
    p.add_argument("--detector-model", default="bright-region-contours")
    p.add_argument("--asd-model", default="motion-audio-synchrony")
    p.set_defaults(func=_cmd_manifest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
