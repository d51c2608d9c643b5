"""Per-file and set-level scoring of hypothesis language annotations."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..errors import UndefinedMetricError
from ..metrics import (
    BOOTSTRAP_FRAME_RATE,
    MetricReport,
    ReportRow,
    WerResult,
    bootstrap_ci,
    lder,
    ler_parts,
    wer,
)
from ..timeline import LabeledAnnotation, to_frames

log = logging.getLogger(__name__)


@dataclass
class FileScore:
    file_id: str
    duration: float
    report: MetricReport
    ler_incorrect: float
    ler_speech: float
    wer: WerResult | None = None


@dataclass
class Evaluation:
    method: str
    files: list[FileScore]
    aggregate: MetricReport
    excluded: list[str] = field(default_factory=list)
    wer: WerResult | None = None

    def row(self) -> ReportRow:
        return ReportRow.from_report(self.method, self.aggregate, self.wer.wer if self.wer else None)

    def file_rows(self) -> list[ReportRow]:
        return [ReportRow.from_report(f.file_id, f.report, f.wer.wer if f.wer else None) for f in self.files]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "aggregate": self.aggregate.to_dict(),
            "wer": None if self.wer is None else self.wer.__dict__,
            "excluded": self.excluded,
            "files": [
                {
                    "file_id": f.file_id,
                    "duration": f.duration,
                    "report": f.report.to_dict(),
                    "wer": None if f.wer is None else f.wer.__dict__,
                }
                for f in self.files
            ],
        }


def score_file(
    ref: LabeledAnnotation,
    hyp: LabeledAnnotation,
    duration: float,
    ref_tokens: Sequence[str] | None = None,
    hyp_tokens: Sequence[str] | None = None,
) -> FileScore:
    report = lder(ref, hyp, duration)
    incorrect, speech = ler_parts(ref, hyp)
    report.ler = incorrect / speech if speech > 0 else None
    w = wer(ref_tokens, hyp_tokens or []) if ref_tokens is not None else None
    return FileScore(ref.file_id or hyp.file_id, duration, report, incorrect, speech, w)


def aggregate(scores: Sequence[FileScore]) -> MetricReport:
    """Duration-weighted set-level report (equivalently, pooled time)."""
    total = sum(s.duration for s in scores)
    if total <= 0:
        raise UndefinedMetricError("no scored audio")
    per_lang: dict[str, float] = {}
    for s in scores:
        for lab, sec in s.report.per_language_confusion.items():
            per_lang[lab] = per_lang.get(lab, 0.0) + sec
    speech = sum(s.ler_speech for s in scores)
    return MetricReport(
        lc=sum(s.report.lc * s.duration for s in scores) / total,
        ms=sum(s.report.ms * s.duration for s in scores) / total,
        fa=sum(s.report.fa * s.duration for s in scores) / total,
        total_audio=total,
        scored_speech=sum(s.report.scored_speech for s in scores),
        per_language_confusion=per_lang,
        ler=sum(s.ler_incorrect for s in scores) / speech if speech > 0 else None,
    )


def pooled_frames(
    refs: Sequence[LabeledAnnotation],
    hyps: Sequence[LabeledAnnotation],
    durations: Sequence[float],
    labels: Sequence[str],
    frame_rate: float = BOOTSTRAP_FRAME_RATE,
) -> tuple[np.ndarray, np.ndarray]:
    ref_f = [to_frames(r, frame_rate, d, labels) for r, d in zip(refs, durations)]
    hyp_f = [to_frames(h, frame_rate, d, labels) for h, d in zip(hyps, durations)]
    if not ref_f:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ref_f), np.concatenate(hyp_f)


def evaluate(
    method: str,
    hyps: Mapping[str, LabeledAnnotation],
    refs: Mapping[str, LabeledAnnotation],
    durations: Mapping[str, float],
    *,
    ref_tokens: Mapping[str, Sequence[str]] | None = None,
    hyp_tokens: Mapping[str, Sequence[str]] | None = None,
    resamples: int = 1000,
    seed: int = 0,
) -> Evaluation:
    """Score every hypothesis with a reference; files without one are listed in ``excluded``.

    The confidence interval on the aggregate LDER comes from bootstrapping
    the pooled 10 ms frame labels of all scored files.
    """
    scores, excluded = [], []
    for fid in sorted(hyps):
        if fid not in refs:
            log.warning("%s: no reference, excluded from scoring", fid)
            excluded.append(fid)
            continue
        rt = ref_tokens.get(fid) if ref_tokens else None
        ht = hyp_tokens.get(fid) if hyp_tokens else None
        scores.append(score_file(refs[fid], hyps[fid], durations[fid], rt, ht))
    agg = aggregate(scores)
    labels = sorted({lab for fid in refs for lab in refs[fid].label_space} | {lab for h in hyps.values() for lab in h.label_space})
    scored = [s.file_id for s in scores]
    ref_frames, hyp_frames = pooled_frames(
        [refs[f] for f in scored], [hyps[f] for f in scored], [durations[f] for f in scored], labels
    )
    agg.ci_low, agg.ci_high = bootstrap_ci(ref_frames, hyp_frames, "lder", resamples, seed)
    total_wer = None
    with_wer = [s.wer for s in scores if s.wer is not None]
    if with_wer:
        S = sum(w.substitutions for w in with_wer)
        I = sum(w.insertions for w in with_wer)
        D = sum(w.deletions for w in with_wer)
        n = sum(w.ref_words for w in with_wer)
        total_wer = WerResult(S, I, D, n, (S + I + D) / max(1, n), empty_reference=n == 0)
    return Evaluation(method, scores, agg, excluded, total_wer)
