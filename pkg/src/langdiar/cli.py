"""Command line entry point.

Exit status: 0 success, 1 configuration error, 2 data error, 3 transcription client error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .audio import read_wav
from .errors import ConfigError, DataError, LangDiarError
from .metrics import REPORT_COLUMNS, rows_to_csv
from .pipeline.config import PipelineConfig, load_config
from .pipeline.evaluate import evaluate
from .pipeline.runner import FileSource, load_manifest, run_benchmark, sources_from_wavs
from .pipeline.systems import FileError, System
from .rttm import format_rttm, read_rttm, timeline_annotation
from .synthgen import MixSpec, write_mix_set
from .timeline import LabeledAnnotation, Segment

RTTM_SLACK = 1e-3  # RTTM rounds start and duration to 1 ms each

log = logging.getLogger("langdiar")


def _global_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS so the flags work both before and after the subcommand.
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS, help="output root (default ./runs)")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel file workers (default 1)")
    parser.add_argument("--config", default=argparse.SUPPRESS, help="PipelineConfig JSON file")


def _component_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--topology", choices=("vad_seg_sli", "sd_seg_sli", "vad_frame_sli"))
    parser.add_argument("--vad", choices=("oracle", "energy", "stitched"))
    parser.add_argument("--diarizer", choices=("oracle", "reference"))
    parser.add_argument("--classifier", choices=("oracle", "reference"))


def _inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("inputs", nargs="+", help="a set directory or manifest.json, or WAV files/directories")
    parser.add_argument("--rttm-dir", help="reference RTTM directory for WAV inputs (<file-id>.rttm)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common)
    parser = argparse.ArgumentParser(prog="langdiar", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic multilingual test set")
    p.add_argument("--mode", choices=("short", "long"), default="short")
    p.add_argument("--gap", choices=("none", "1s"), default="1s")
    p.add_argument("--n-files", type=int, default=60)
    p.add_argument("--target-len", type=float, default=60.0, help="speech seconds per file")
    p.add_argument("--languages", default="da,sv,en", help="comma separated")
    p.add_argument("--reuse-voice", action="store_true", help="one voice for every segment of a file")

    for name, text in (
        ("segment", "speech segmentation, written as SPEAKER 'speech' RTTM"),
        ("diarize", "speaker diarization, written as SPEAKER RTTM"),
        ("identify", "run a language identification topology and score it"),
        ("transcribe", "identify, then route segments to transcription clients and score WER"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        _inputs(p)
        _component_flags(p)

    p = sub.add_parser("score", parents=[common], help="score LANGUAGE hypothesis RTTM against reference RTTM")
    p.add_argument("--ref", nargs="+", required=True, help="reference RTTM files or directories")
    p.add_argument("--hyp", nargs="+", required=True, help="hypothesis RTTM files or directories")
    p.add_argument("--wav-dir", help="WAV directory giving file durations")
    p.add_argument("--manifest", help="set manifest giving file durations")
    p.add_argument("--name", default="system", help="method name in the report")
    p.add_argument("--languages", help="comma separated label space (default: from the reference)")

    p = sub.add_parser("report", parents=[common], help="collect run directories into one table")
    p.add_argument("runs", nargs="+", help="run directories holding report.json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in ("topology", "vad", "diarizer", "classifier", "seed")}
    return load_config(getattr(args, "config", None), **overrides)


def _sources(args: argparse.Namespace) -> list[FileSource]:
    paths = [Path(p) for p in args.inputs]
    if len(paths) == 1 and (paths[0].suffix == ".json" or (paths[0] / "manifest.json").exists()):
        return load_manifest(paths[0])
    wavs: list[Path] = []
    for p in paths:
        if p.is_dir():
            wavs.extend(sorted(p.glob("*.wav")))
        elif p.exists():
            wavs.append(p)
        else:
            raise DataError(f"no such input: {p}")
    if not wavs:
        raise DataError("no WAV inputs found")
    return sources_from_wavs(wavs, args.rttm_dir)


def _rttm_files(items: Sequence[str]) -> list[Path]:
    out: list[Path] = []
    for item in items:
        p = Path(item)
        out.extend(sorted(p.glob("*.rttm")) if p.is_dir() else [p])
    return out


def _cmd_synth(args: argparse.Namespace, out_dir: Path) -> int:
    spec = MixSpec(
        mode=args.mode,
        gap=args.gap,
        n_files=args.n_files,
        target_file_len=args.target_len,
        languages=tuple(x for x in args.languages.split(",") if x),
        seed=getattr(args, "seed", 0),
        reuse_voice=args.reuse_voice,
    )
    root = write_mix_set(spec, out_dir)
    print(root)
    return 0


def _cmd_local(args: argparse.Namespace, out_dir: Path) -> int:
    """``segment`` and ``diarize``: per-file RTTM without scoring."""
    cfg = _config(args)
    system = System(cfg.model_copy(update={"classifier": "oracle"}))
    target = out_dir / f"{args.command}-{cfg.config_hash()}"
    target.mkdir(parents=True, exist_ok=True)
    worst = 0
    for src in _sources(args):
        try:
            f = src.load(cfg.languages)
            if args.command == "segment":
                ann = timeline_annotation(system.speech(f), f.file_id)
            else:
                ann = system.speakers(f)
        except (ConfigError, FileError) as exc:
            if isinstance(exc, ConfigError) or isinstance(exc.cause, ConfigError):
                raise
            log.error("%s", exc)
            worst = max(worst, exc.exit_code)
            continue
        except LangDiarError as exc:
            log.error("%s: %s", src.file_id, exc)
            worst = max(worst, exc.exit_code)
            continue
        (target / f"{src.file_id}.rttm").write_text(format_rttm([ann]))
    print(target)
    return worst


def _cmd_run(args: argparse.Namespace, out_dir: Path) -> int:
    cfg = _config(args)
    result = run_benchmark(
        cfg, _sources(args), out_dir, jobs=getattr(args, "jobs", 1), transcribe=args.command == "transcribe"
    )
    if result.evaluation is not None:
        sys.stdout.write(rows_to_csv([result.evaluation.row()]))
    for o in result.failed:
        log.error("%s", o.error)
    print(result.run_dir)
    return result.exit_code


def _cmd_score(args: argparse.Namespace, out_dir: Path) -> int:
    space = tuple(x for x in args.languages.split(",") if x) if args.languages else ()
    refs, hyps = {}, {}
    for path in _rttm_files(args.ref):
        refs.update(read_rttm(path, kind="language", label_space=space).get("language", {}))
    if not space:
        space = tuple(sorted({lab for a in refs.values() for lab in a.labels()}))
        refs = {fid: LabeledAnnotation(a.entries, space, fid, "language") for fid, a in refs.items()}
    for path in _rttm_files(args.hyp):
        hyps.update(read_rttm(path, kind="language", label_space=space).get("language", {}))
    if not hyps:
        raise DataError("no LANGUAGE lines in the hypothesis RTTM")
    durations = _durations(args, hyps, refs)
    refs = {fid: _clip_rounding(a, durations.get(fid)) for fid, a in refs.items()}
    hyps = {fid: _clip_rounding(a, durations.get(fid)) for fid, a in hyps.items()}
    result = evaluate(args.name, hyps, refs, durations, resamples=1000, seed=getattr(args, "seed", 0))
    out_dir.mkdir(parents=True, exist_ok=True)
    text = rows_to_csv([result.row()])
    (out_dir / f"score-{args.name}.csv").write_text(text)
    (out_dir / f"score-{args.name}.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    for fid in result.excluded:
        log.warning("%s: excluded (no reference)", fid)
    return 0


def _clip_rounding(ann: LabeledAnnotation, duration: float | None) -> LabeledAnnotation:
    # RTTM times carry 1 ms; an end rounded up past the audio is pulled back.
    if duration is None or ann.end_time() <= duration or ann.end_time() > duration + RTTM_SLACK:
        return ann
    entries = [(Segment(s.start, min(s.end, duration)), lab) for s, lab in ann if s.start < duration]
    return ann.replace(entries)


def _durations(args: argparse.Namespace, hyps: dict, refs: dict) -> dict[str, float]:
    if args.manifest:
        path = Path(args.manifest)
        path = path / "manifest.json" if path.is_dir() else path
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from None
        known = {f["file_id"]: float(f["duration"]) for f in data.get("files", [])}
    elif args.wav_dir:
        known = {p.stem: read_wav(p).duration for p in sorted(Path(args.wav_dir).glob("*.wav"))}
    else:
        # Without audio the scored extent is the last annotated instant.
        known = {}
        for fid in set(hyps) | set(refs):
            ends = [a.end_time() for a in (hyps.get(fid), refs.get(fid)) if a is not None]
            known[fid] = max(ends)
    missing = sorted(set(hyps) - set(known))
    if missing:
        raise DataError(f"no duration for files {missing}")
    return known


def _cmd_report(args: argparse.Namespace, out_dir: Path) -> int:
    rows = []
    for run in args.runs:
        path = Path(run) / "report.json"
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        rows.extend(data.get("rows", []))
    if args.format == "json":
        sys.stdout.write(json.dumps(rows, indent=2) + "\n")
        return 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([row["method"]] + ["" if row[c] is None else f"{row[c]:.2f}" for c in REPORT_COLUMNS[1:]])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "segment": _cmd_local,
    "diarize": _cmd_local,
    "identify": _cmd_run,
    "transcribe": _cmd_run,
    "score": _cmd_score,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler()
    handler.setLevel(logging.INFO if args.verbose else logging.WARNING)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    out_dir = Path(getattr(args, "out_dir", "runs"))
    try:
        return COMMANDS[args.command](args, out_dir)
    except LangDiarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
