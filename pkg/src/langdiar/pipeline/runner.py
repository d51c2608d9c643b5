"""Batch runs: load inputs, run one configured system per file, score and write artifacts.

Artifacts land in ``<out_dir>/<topology>-<config hash>/``::

    config.json     the resolved configuration
    hyp/<id>.rttm   one LANGUAGE hypothesis per file
    report.csv      aggregate row in the usual column order
    report.json     aggregate, per-file reports, excluded and failed files
    per_file.csv    one row per scored file
    transcripts.json  (only when transcription is requested)
    run.log         human-readable log, the only file carrying timings
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..audio import read_wav
from ..errors import ConfigError, DataError, LangDiarError
from ..metrics import rows_to_csv, rows_to_json
from ..rttm import format_rttm, read_rttm
from ..sli import LanguageModelRef
from ..synthgen import MixPlaylist
from ..timeline import LabeledAnnotation
from .config import PipelineConfig
from .evaluate import Evaluation, evaluate
from .systems import FileError, FileInput, System, reference_model
from .transcribe import MockClient, build_clients, route_and_transcribe

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FileSource:
    """Where one input file and its (optional) truth live."""

    file_id: str
    wav: Path
    rttm: Path | None = None
    playlist: dict | None = None
    ref_tokens: tuple[str, ...] | None = None

    def load(self, languages: Sequence[str]) -> FileInput:
        audio = read_wav(self.wav)
        ref_lang = ref_spk = None
        if self.playlist is not None:
            pl = MixPlaylist.from_dict(self.playlist)
            ref_lang, ref_spk = pl.language_annotation(), pl.speaker_annotation()
        elif self.rttm is not None and self.rttm.exists():
            parsed = read_rttm(self.rttm, label_space=languages)
            ref_lang = parsed.get("language", {}).get(self.file_id)
            ref_spk = parsed.get("speaker", {}).get(self.file_id)
        return FileInput(self.file_id, audio, ref_lang, ref_spk)


def load_manifest(path: str | Path) -> list[FileSource]:
    """Read a set manifest (as written by ``write_mix_set``); paths are relative to it."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    root = path.parent
    out = []
    for item in data.get("files", []):
        tokens = item.get("transcript")
        out.append(
            FileSource(
                item["file_id"],
                root / item["wav"],
                root / item["rttm"] if item.get("rttm") else None,
                item.get("playlist"),
                tuple(tokens) if tokens is not None else None,
            )
        )
    return sorted(out, key=lambda s: s.file_id)


def sources_from_wavs(wavs: Sequence[str | Path], rttm_dir: str | Path | None = None) -> list[FileSource]:
    out = []
    for w in wavs:
        w = Path(w)
        rttm = Path(rttm_dir) / f"{w.stem}.rttm" if rttm_dir else None
        out.append(FileSource(w.stem, w, rttm))
    return sorted(out, key=lambda s: s.file_id)


@dataclass
class FileOutcome:
    file_id: str
    duration: float = 0.0
    hypothesis: LabeledAnnotation | None = None
    ref_lang: LabeledAnnotation | None = None
    stats: dict = field(default_factory=dict)
    hyp_tokens: list[str] | None = None
    ref_tokens: list[str] | None = None
    transcript_segments: list[dict] = field(default_factory=list)
    error: str | None = None
    exit_code: int = 0
    seconds: float = 0.0


@dataclass
class RunResult:
    run_dir: Path
    evaluation: Evaluation | None
    outcomes: list[FileOutcome]

    @property
    def failed(self) -> list[FileOutcome]:
        return [o for o in self.outcomes if o.error]

    @property
    def exit_code(self) -> int:
        return max((o.exit_code for o in self.outcomes), default=0)


def process_file(system: System, source: FileSource, transcribe: bool = False) -> FileOutcome:
    t0 = time.perf_counter()
    out = FileOutcome(source.file_id)
    try:
        f = source.load(system.cfg.languages)
        out.duration, out.ref_lang = f.duration, f.ref_lang
        result = system.run(f)
        out.hypothesis, out.stats = result.hypothesis, result.stats
        if transcribe:
            cfg = system.cfg
            clients = build_clients(cfg.clients)
            tr = route_and_transcribe(result.hypothesis, f.audio, clients, missing=cfg.missing_client, merge=cfg.merge_same_label)
            out.hyp_tokens = tr.tokens
            out.transcript_segments = [s.__dict__ for s in tr.segments]
            if source.ref_tokens is not None:
                out.ref_tokens = list(source.ref_tokens)
            elif f.ref_lang is not None and all(isinstance(c, MockClient) for c in clients.values()):
                out.ref_tokens = route_and_transcribe(f.ref_lang, f.audio, clients).tokens
    except FileError as exc:
        if isinstance(exc.cause, ConfigError):
            raise exc.cause from None
        out.error, out.exit_code = str(exc), exc.exit_code
    except ConfigError:
        raise
    except LangDiarError as exc:
        out.error, out.exit_code = f"{source.file_id}: {exc}", exc.exit_code
    out.seconds = time.perf_counter() - t0
    return out


_WORKER: dict = {}


def _init_worker(cfg_json: str, model: LanguageModelRef | None, transcribe: bool) -> None:
    _WORKER["system"] = System(PipelineConfig.model_validate_json(cfg_json), model)
    _WORKER["transcribe"] = transcribe


def _work(source: FileSource) -> FileOutcome:
    return process_file(_WORKER["system"], source, _WORKER["transcribe"])


def run_dir_for(cfg: PipelineConfig, out_dir: str | Path) -> Path:
    return Path(out_dir) / f"{cfg.topology}-{cfg.config_hash()}"


def run_benchmark(
    cfg: PipelineConfig,
    sources: Sequence[FileSource],
    out_dir: str | Path,
    *,
    jobs: int = 1,
    transcribe: bool = False,
    model: LanguageModelRef | None = None,
) -> RunResult:
    """Run ``cfg`` on every source, score against available truth and write the artifacts.

    Files are processed in a pool of ``jobs`` workers; assembly is ordered by
    file id so the written reports do not depend on scheduling.
    """
    if cfg.classifier == "reference" and model is None:
        model = reference_model(cfg)
    sources = sorted(sources, key=lambda s: s.file_id)
    ids = [s.file_id for s in sources]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate file ids in input")
    run_dir = run_dir_for(cfg, out_dir)
    (run_dir / "hyp").mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg_log = logging.getLogger("langdiar")
    pkg_log.addHandler(handler)
    prev_level = pkg_log.level
    pkg_log.setLevel(logging.INFO)
    try:
        (run_dir / "config.json").write_text(cfg.canonical_json() + "\n")
        log.info("run %s: %d files, %d jobs", run_dir.name, len(sources), jobs)
        if jobs > 1 and len(sources) > 1:
            with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg.model_dump_json(), model, transcribe)) as pool:
                outcomes = list(pool.map(_work, sources))
        else:
            system = System(cfg, model)
            outcomes = [process_file(system, s, transcribe) for s in sources]
        result = _assemble(cfg, run_dir, outcomes, transcribe)
    finally:
        pkg_log.removeHandler(handler)
        pkg_log.setLevel(prev_level)
        handler.close()
    return result


def _assemble(cfg: PipelineConfig, run_dir: Path, outcomes: list[FileOutcome], transcribe: bool) -> RunResult:
    hyps, refs, durations, ref_tok, hyp_tok = {}, {}, {}, {}, {}
    for o in outcomes:
        if o.error:
            log.error("%s", o.error)
            continue
        log.info("%s: %.2fs audio in %.2fs, %s", o.file_id, o.duration, o.seconds, " ".join(f"{k}={v}" for k, v in sorted(o.stats.items())))
        (run_dir / "hyp" / f"{o.file_id}.rttm").write_text(format_rttm([o.hypothesis]))
        hyps[o.file_id], durations[o.file_id] = o.hypothesis, o.duration
        if o.ref_lang is not None:
            refs[o.file_id] = o.ref_lang
        if o.ref_tokens is not None:
            ref_tok[o.file_id], hyp_tok[o.file_id] = o.ref_tokens, o.hyp_tokens or []
    evaluation = None
    report: dict = {"method": cfg.topology, "config_hash": cfg.config_hash()}
    if refs:
        evaluation = evaluate(
            cfg.topology,
            hyps,
            refs,
            durations,
            ref_tokens=ref_tok or None,
            hyp_tokens=hyp_tok or None,
            resamples=cfg.bootstrap_resamples,
            seed=cfg.seed,
        )
        (run_dir / "report.csv").write_text(rows_to_csv([evaluation.row()]))
        (run_dir / "per_file.csv").write_text(rows_to_csv(evaluation.file_rows()))
        report.update(evaluation.to_dict())
        report["rows"] = json.loads(rows_to_json([evaluation.row()]))
    else:
        log.warning("no references available; hypotheses written without scoring")
        report["excluded"] = sorted(hyps)
    report["failed"] = [{"file_id": o.file_id, "error": o.error} for o in outcomes if o.error]
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if transcribe:
        payload = {
            o.file_id: {"tokens": o.hyp_tokens, "reference": o.ref_tokens, "segments": o.transcript_segments}
            for o in outcomes
            if not o.error
        }
        (run_dir / "transcripts.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return RunResult(run_dir, evaluation, outcomes)
