"""Command-line front end: bank / generate / align / eval subcommands.

Exit codes: 0 success, 2 input data error, 3 no clip succeeded,
5 low-confidence alignment, 64 usage or configuration error.  Every
command honors ``--config`` (flat JSON, flags override) and ``--dry-run``
(print the resolved config and exit).  Outputs are JSON lines written
with sorted keys so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import alignment as al
from .characters import (
    StubFaceDetector,
    HttpFaceService,
    ingest_bank,
    load_bank,
    save_bank,
)
from .config import RunConfig
from .errors import (
    AdZeroError,
    BankFormatError,
    ContractError,
    EmptyBankError,
    LowConfidenceError,
)
from .evaluation import (
    LENIENT_SCORE_ADAPTER,
    EvalPair,
    IdentityCoref,
    char_metrics,
    cider,
    critic,
    duration_stats,
    extract_names,
    llm_ad_eval,
)
from .gateway import HttpGateway, ScriptedGateway
from .stage1 import Stage1Config, VideoClip, describe_clip
from .stage2 import (
    ADRecord,
    SummaryConfig,
    VerbList,
    builtin_verb_list,
    summarize,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ALL_FAILED = 3
EXIT_MISALIGNED = 5
EXIT_USAGE = 64

KNOWN_METRICS = ("cider", "critic", "llm", "char", "duration")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _jsonl_rows(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def _require_file(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: no such file or directory: {path}")
    return p


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in RunConfig.known_keys():
        value = getattr(args, f"opt_{key}", None)
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument(
        "--dry-run", action="store_true", help="print resolved config and exit"
    )
    parser.add_argument("--jobs", type=int, dest="opt_jobs", default=None,
                        help="parallel workers (0 = cores)")
    parser.add_argument("--seed", type=int, dest="opt_seed", default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="adzero", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_bank = sub.add_parser("bank", help="build a character bank from a manifest")
    p_bank.add_argument("--manifest", required=True)
    p_bank.add_argument("--out", required=True)
    p_bank.add_argument("--title-id", default="")
    p_bank.add_argument("--face-service", help="base URL of a face embed service")
    _add_common(p_bank)

    p_gen = sub.add_parser("generate", help="two-stage AD generation over clips")
    p_gen.add_argument("--clips", required=True, help="JSONL clip list")
    p_gen.add_argument("--bank", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--stage1-only", action="store_true")
    p_gen.add_argument("--stub-script", help="scripted gateway JSON file")
    p_gen.add_argument(
        "--detections", help="directory of per-clip precomputed detection JSONL"
    )
    p_gen.add_argument("--face-service", help="base URL of a face detect service")
    _add_common(p_gen)

    p_align = sub.add_parser("align", help="align narrated and original soundtracks")
    p_align.add_argument("--av-audio", required=True, help="narrated WAV")
    p_align.add_argument("--tv-audio", required=True, help="original WAV")
    p_align.add_argument("--av-transcript", required=True, help="JSONL with speakers")
    p_align.add_argument("--tv-transcript", required=True, help="JSONL")
    p_align.add_argument("--out", required=True, help="output AD JSONL")
    p_align.add_argument("--report", required=True, help="alignment report JSON")
    p_align.add_argument("--title-id", default="")
    _add_common(p_align)

    p_eval = sub.add_parser("eval", help="score predicted ADs")
    p_eval.add_argument("--pairs", required=True, help="JSONL eval pairs")
    p_eval.add_argument("--metrics", required=True,
                        help="comma list of cider,critic,llm,char,duration")
    p_eval.add_argument("--out-dir", required=True)
    p_eval.add_argument("--bank", help="character bank (critic/char)")
    p_eval.add_argument("--stub-script", help="scripted judge JSON file")
    _add_common(p_eval)

    return parser


# --------------------------------------------------------------------------
# Frame loading

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def load_clip(row: dict) -> VideoClip:
    """Load a clip-list row into frames with timestamps.

    ``video_path`` may be a directory of image frames (sorted by name,
    timestamps spread uniformly over [start, end]) or a video file
    decoded with OpenCV when available.
    """
    from PIL import Image

    clip_id = row["clip_id"]
    path = Path(row["video_path"])
    start = float(row["start_s"])
    end = float(row["end_s"])
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not files:
            raise ContractError(f"clip {clip_id}: no image frames in {path}")
        frames = [Image.open(p).convert("RGB") for p in files]
        if len(frames) == 1:
            stamps = [start]
        else:
            step = (end - start) / (len(frames) - 1)
            stamps = [start + i * step for i in range(len(frames))]
        return VideoClip(clip_id=clip_id, frames=frames, timestamps=stamps,
                         start=start, end=end)
    try:
        import cv2
    except ImportError as exc:
        raise ContractError(
            f"clip {clip_id}: decoding {path} requires opencv-python"
        ) from exc
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise ContractError(f"clip {clip_id}: cannot open video {path}")
    fps = capture.get(cv2.CAP_PROP_FPS) or 25.0
    frames, stamps = [], []
    capture.set(cv2.CAP_PROP_POS_MSEC, start * 1000.0)
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        t = capture.get(cv2.CAP_PROP_POS_MSEC) / 1000.0
        if t > end + 0.5 / fps:
            break
        frames.append(Image.fromarray(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)))
        stamps.append(max(start, min(end, t)))
    capture.release()
    if not frames:
        raise ContractError(f"clip {clip_id}: no frames in [{start}, {end}]")
    return VideoClip(clip_id=clip_id, frames=frames, timestamps=stamps,
                     start=start, end=end)


# --------------------------------------------------------------------------
# Subcommands


def cmd_bank(args) -> int:
    manifest = _require_file(args.manifest, "--manifest")
    embedder = HttpFaceService(args.face_service) if args.face_service else None
    try:
        bank = ingest_bank(
            manifest,
            embedder=embedder,
            capacity=_load_config(args).bank_capacity,
            title_id=args.title_id,
        )
    except (BankFormatError, EmptyBankError) as exc:
        print(f"adzero bank: {exc}", file=sys.stderr)
        return EXIT_INPUT
    save_bank(bank, args.out)
    print(f"wrote bank with {len(bank.profiles)} profiles to {args.out}")
    return EXIT_OK


def _summary_config(config: RunConfig) -> SummaryConfig:
    if config.verb_list is not None:
        verbs = VerbList(verbs=tuple(config.verb_list), k=len(config.verb_list))
    else:
        verbs = builtin_verb_list(config.verb_domain)
    return SummaryConfig(
        character_rules=config.summary_character_rules,
        action_rules=config.summary_action_rules,
        length_hint=config.summary_length_hint,
        examples=config.summary_examples,
        verb_list=verbs,
        media_kind=config.media_kind,
        legacy_instruction_wrapper=config.legacy_instruction_wrapper,
    )


def cmd_generate(args) -> int:
    config = _load_config(args)
    clips_path = _require_file(args.clips, "--clips")
    bank = load_bank(_require_file(args.bank, "--bank"))
    if args.stub_script:
        gateway = ScriptedGateway.from_file(_require_file(args.stub_script,
                                                          "--stub-script"))
    else:
        gateway = HttpGateway()
    detections_dir = Path(args.detections) if args.detections else None
    if detections_dir is not None and not detections_dir.is_dir():
        raise UsageError(f"--detections: not a directory: {detections_dir}")
    face_service = HttpFaceService(args.face_service) if args.face_service else None
    if detections_dir is None and face_service is None:
        raise UsageError("one of --detections or --face-service is required")

    stage1_config = Stage1Config(
        endpoint=config.endpoint("vlm"),
        style=config.style(),
        factors=config.description_factors(),
        frames_per_clip=config.frames_per_clip,
        match_threshold=config.match_threshold,
        media_kind=config.media_kind,
        pad_ratio=config.pad_ratio,
    )
    summary_config = _summary_config(config)
    llm_endpoint = config.endpoint("llm")
    rows = _jsonl_rows(clips_path)

    def process(row: dict) -> dict | None:
        clip_id = row.get("clip_id", "?")
        try:
            clip = load_clip(row)
            if detections_dir is not None:
                det_file = detections_dir / f"{clip.clip_id}.jsonl"
                if not det_file.exists():
                    raise ContractError(f"no detection file {det_file}")
                detector = StubFaceDetector(det_file)
            else:
                detector = face_service
            desc = describe_clip(clip, bank, detector, gateway, stage1_config)
            if args.stage1_only:
                return {
                    "clip_id": clip.clip_id,
                    "description": {
                        "main_characters": desc.main_characters,
                        "actions": desc.actions,
                        "interactions": desc.interactions,
                        "facial_expressions": desc.facial_expressions,
                        **desc.extras,
                    },
                    "raw": desc.raw,
                }
            record = summarize(
                desc,
                clip.duration,
                gateway,
                llm_endpoint,
                summary_config,
                clip_id=clip.clip_id,
                start=clip.start,
            )
            return {
                "clip_id": record.clip_id,
                "start_s": record.start,
                "end_s": record.end,
                "text": record.text,
                "stage1_raw": desc.raw,
            }
        except Exception as exc:
            logger.error("clip %s failed: %s", clip_id, exc)
            return None

    jobs = args.opt_jobs if args.opt_jobs is not None else config.jobs
    if jobs == 0:
        jobs = os.cpu_count() or 1
    jobs = max(1, min(jobs, config.max_in_flight))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(process, rows))
    else:
        results = [process(row) for row in rows]

    successes = [r for r in results if r is not None]
    with open(args.out, "w", encoding="utf-8") as f:
        for result in successes:
            f.write(_dump_line(result))
    print(f"{len(successes)}/{len(rows)} clips succeeded -> {args.out}")
    return EXIT_OK if successes else EXIT_ALL_FAILED


def _read_transcript(path: Path) -> list[al.TranscriptSegment]:
    segments = []
    for row in _jsonl_rows(path):
        segments.append(
            al.TranscriptSegment(
                text=row["text"],
                start=float(row["start_s"]),
                end=float(row["end_s"]),
                speaker=row.get("speaker"),
            )
        )
    return segments


def cmd_align(args) -> int:
    config = _load_config(args)
    av_audio = al.load_wav(_require_file(args.av_audio, "--av-audio"))
    tv_audio = al.load_wav(_require_file(args.tv_audio, "--tv-audio"))
    av_transcript = _read_transcript(_require_file(args.av_transcript,
                                                   "--av-transcript"))
    tv_transcript = _read_transcript(_require_file(args.tv_transcript,
                                                   "--tv-transcript"))
    align_config = al.AlignmentConfig(
        title_id=args.title_id,
        chunk=config.align_chunk_s,
        stride=config.align_stride_s,
        min_anchor_score=config.align_min_anchor_score,
        inlier_tol=config.align_inlier_tol_s,
        iterations=config.align_iterations,
        min_inlier_ratio=config.align_min_inlier_ratio,
        delta_t=config.align_delta_t_s,
        wer_threshold=config.align_wer_threshold,
        seed=config.seed,
    )
    mel_av = al.mel_spectrogram(av_audio)
    mel_tv = al.mel_spectrogram(tv_audio)
    # The narrator is assumed to dominate the narrated-track transcript;
    # that speaker's intervals are masked out of the correlation.
    intervals = []
    if av_transcript and all(s.speaker is not None for s in av_transcript):
        narrator = al.majority_speaker(av_transcript)
        intervals = [
            (s.start, s.end) for s in av_transcript if s.speaker == narrator
        ]
    try:
        records, report = al.build_ads(
            av_transcript, tv_transcript, intervals, mel_av, mel_tv, align_config
        )
    except LowConfidenceError as exc:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "title_id": args.title_id,
                    "error": "misalignment",
                    "inlier_ratio": exc.inlier_ratio,
                    "cutoff": exc.cutoff,
                },
                f, sort_keys=True, indent=2,
            )
        print(f"adzero align: {exc}", file=sys.stderr)
        return EXIT_MISALIGNED
    with open(args.out, "w", encoding="utf-8") as f:
        for record in records:
            f.write(
                _dump_line(
                    {
                        "clip_id": record.clip_id,
                        "start_s": record.start,
                        "end_s": record.end,
                        "text": record.text,
                    }
                )
            )
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
    print(f"{len(records)} ADs -> {args.out}; report -> {args.report}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(KNOWN_METRICS)
    if unknown:
        raise UsageError(f"unknown metrics: {sorted(unknown)}")
    pairs_path = _require_file(args.pairs, "--pairs")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = []
    for row in _jsonl_rows(pairs_path):
        pairs.append(
            EvalPair(
                pred=row["pred"],
                refs=tuple(row["refs"]),
                clip_id=row.get("clip_id", ""),
                gt_duration=row.get("gt_duration_s"),
            )
        )
    if not pairs:
        raise UsageError("--pairs file holds no rows")

    bank = None
    if "critic" in metrics or "char" in metrics:
        bank = load_bank(_require_file(args.bank, "--bank"))

    reports = {}
    for metric in metrics:
        if metric == "cider":
            reports[metric] = cider(pairs, use_d=config.cider_variant == "d")
        elif metric == "critic":
            reports[metric] = critic(pairs, bank, IdentityCoref())
        elif metric == "char":
            coref = IdentityCoref()
            pred_sets = [extract_names(p.pred, bank, coref) for p in pairs]
            gt_sets = []
            for p in pairs:
                names: set[str] = set()
                for ref in p.refs:
                    names |= extract_names(ref, bank, coref)
                gt_sets.append(names)
            reports[metric] = char_metrics(pred_sets, gt_sets)
        elif metric == "llm":
            if args.stub_script:
                gateway = ScriptedGateway.from_file(
                    _require_file(args.stub_script, "--stub-script")
                )
            else:
                gateway = HttpGateway()
            adapter = (
                LENIENT_SCORE_ADAPTER
                if config.judge_score_adapter == "lenient"
                else ""
            )
            reports[metric] = llm_ad_eval(
                pairs, gateway, config.endpoint("judge"), adapter
            )
        elif metric == "duration":
            records = [
                ADRecord(clip_id=p.clip_id or str(i), text=p.pred, start=0.0,
                         end=p.gt_duration)
                for i, p in enumerate(pairs)
                if p.gt_duration is not None and p.gt_duration > 0
            ]
            if not records:
                raise UsageError("duration metric needs gt_duration_s values")
            stats = duration_stats(records)
            with open(out_dir / "duration.json", "w", encoding="utf-8") as f:
                json.dump(stats.to_dict(), f, sort_keys=True, indent=2)
            print(f"duration: mean {stats.mean:.3f}s")
            continue
    for name, report in reports.items():
        with open(out_dir / f"{name}.json", "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        print(f"{name}: {report.corpus_score:.4f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("ADZERO_LOG", "WARNING"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.dry_run:
            print(json.dumps(_load_config(args).to_dict(), sort_keys=True, indent=2))
            return EXIT_OK
        handler = {
            "bank": cmd_bank,
            "generate": cmd_generate,
            "align": cmd_align,
            "eval": cmd_eval,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"adzero: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractError as exc:
        print(f"adzero: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdZeroError as exc:
        print(f"adzero: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
