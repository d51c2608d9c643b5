"""Language diarization metrics: LDER (with LC/MS/FA), LER, WER and
percentile-bootstrap confidence intervals over frame labels."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CoverageError, LabelSpaceError, UndefinedMetricError
from .timeline import (
    MERGE_TOLERANCE,
    NON_SPEECH,
    LabeledAnnotation,
    Segment,
    Timeline,
    flatten,
    intersect,
    normalize,
    subtract,
)

BOOTSTRAP_FRAME_RATE = 100.0
REPORT_COLUMNS = ("method", "LDER", "CI_low", "CI_high", "LC", "MS", "FA", "LER", "WER")


@dataclass
class MetricReport:
    """LDER decomposition; all fractions are of ``total_audio``.

    ``lder`` is always recomputed as ``lc + ms + fa``.
    """

    lc: float
    ms: float
    fa: float
    total_audio: float
    scored_speech: float = 0.0
    per_language_confusion: dict[str, float] = field(default_factory=dict)
    ci_low: float | None = None
    ci_high: float | None = None
    ler: float | None = None
    lder: float = field(init=False)

    def __post_init__(self) -> None:
        self.lder = self.lc + self.ms + self.fa

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int
    wer: float
    empty_reference: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _check_space(ref: LabeledAnnotation, hyp: LabeledAnnotation) -> None:
    if ref.kind != hyp.kind:
        raise LabelSpaceError(f"cannot score a {hyp.kind} hypothesis against a {ref.kind} reference")
    extra = set(hyp.labels()) - set(ref.label_space)
    if extra:
        raise LabelSpaceError(
            f"hypothesis labels {sorted(extra)} outside reference label space {list(ref.label_space)}"
        )


def confusion_by_label(ref: LabeledAnnotation, hyp: LabeledAnnotation) -> dict[str, float]:
    """Seconds where both speak and labels differ, keyed by reference label."""
    ref_groups, hyp_groups = ref.by_label(), hyp.by_label()
    out: dict[str, float] = {}
    for rlab, rtl in ref_groups.items():
        total = 0.0
        for hlab, htl in hyp_groups.items():
            if hlab != rlab:
                total += intersect(rtl, htl).duration()
        if total > 0:
            out[rlab] = total
    return out


def _collar_zone(ref: LabeledAnnotation, collar: float, total: float) -> Timeline:
    if collar <= 0:
        return Timeline()
    edges = []
    for seg, _ in ref:
        for t in (seg.start, seg.end):
            lo, hi = max(0.0, t - collar), min(total, t + collar)
            if hi > lo:
                edges.append(Segment(lo, hi))
    return normalize(edges)


def lder(
    ref_lang: LabeledAnnotation,
    hyp_lang: LabeledAnnotation,
    total_audio: float,
    *,
    collar: float = 0.0,
) -> MetricReport:
    """Language diarization error over the whole file.

    No collar by default; a positive ``collar`` removes +-collar seconds
    around every reference boundary from all three error terms (the
    denominator stays ``total_audio``).
    """
    if total_audio <= 0:
        raise UndefinedMetricError("total_audio must be positive")
    for name, ann in (("reference", ref_lang), ("hypothesis", hyp_lang)):
        if ann.end_time() > total_audio + MERGE_TOLERANCE:
            raise CoverageError(f"{name} ends at {ann.end_time():.3f}s beyond total audio {total_audio:.3f}s")
    _check_space(ref_lang, hyp_lang)
    ref, hyp = flatten(ref_lang), flatten(hyp_lang)
    R, H = ref.support(), hyp.support()
    zone = _collar_zone(ref, collar, total_audio)
    if zone:
        R, H = subtract(R, zone), subtract(H, zone)
        ref = _clip(ref, zone)
        hyp = _clip(hyp, zone)
    per_lang = confusion_by_label(ref, hyp)
    confused = sum(per_lang.values())
    return MetricReport(
        lc=confused / total_audio,
        ms=subtract(R, H).duration() / total_audio,
        fa=subtract(H, R).duration() / total_audio,
        total_audio=total_audio,
        scored_speech=R.duration(),
        per_language_confusion=per_lang,
    )


def _clip(ann: LabeledAnnotation, zone: Timeline) -> LabeledAnnotation:
    pieces = []
    for seg, lab in ann:
        pieces.extend((p, lab) for p in subtract(Timeline((seg,)), zone))
    return ann.replace(pieces)


def ler(ref_lang: LabeledAnnotation, hyp_lang: LabeledAnnotation) -> float:
    """Wrongly labeled time over hypothesized speech time.

    Hypothesized speech outside reference speech counts in the denominator
    but not as an error.
    """
    _check_space(ref_lang, hyp_lang)
    ref, hyp = flatten(ref_lang), flatten(hyp_lang)
    speech = hyp.support().duration()
    if speech <= 0:
        raise UndefinedMetricError("hypothesis contains no speech; LER undefined")
    return sum(confusion_by_label(ref, hyp).values()) / speech


def ler_parts(ref_lang: LabeledAnnotation, hyp_lang: LabeledAnnotation) -> tuple[float, float]:
    """(incorrect seconds, hypothesized speech seconds), for pooling across files."""
    ref, hyp = flatten(ref_lang), flatten(hyp_lang)
    return sum(confusion_by_label(ref, hyp).values()), hyp.support().duration()


def edit_alignment(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """(S, I, D) of a minimum-cost unit alignment.

    Among equal-cost paths the backtrace prefers a substitution (or match),
    then an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ri != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    S = I = D = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return int(S), I, D


def wer(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> WerResult:
    S, I, D = edit_alignment(list(ref_tokens), list(hyp_tokens))
    n = len(ref_tokens)
    return WerResult(S, I, D, n, (S + I + D) / max(1, n), empty_reference=n == 0)


# Frame categories for bootstrap resampling.
_CORRECT, _CONFUSED, _MISS, _FA, _SILENT = range(5)


def frame_categories(ref_frames: np.ndarray, hyp_frames: np.ndarray) -> np.ndarray:
    ref = np.asarray(ref_frames)
    hyp = np.asarray(hyp_frames)
    if ref.shape != hyp.shape:
        raise ValueError(f"frame sequences differ in length: {ref.shape} vs {hyp.shape}")
    rs, hs = ref != NON_SPEECH, hyp != NON_SPEECH
    cat = np.full(ref.shape, _SILENT, dtype=np.int64)
    cat[rs & hs & (ref == hyp)] = _CORRECT
    cat[rs & hs & (ref != hyp)] = _CONFUSED
    cat[rs & ~hs] = _MISS
    cat[~rs & hs] = _FA
    return cat


def _metric_from_counts(counts: np.ndarray, metric: str) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if metric == "lder":
        return (counts[..., _CONFUSED] + counts[..., _MISS] + counts[..., _FA]) / counts.sum(axis=-1)
    if metric == "ler":
        speech = counts[..., _CORRECT] + counts[..., _CONFUSED] + counts[..., _FA]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(speech > 0, counts[..., _CONFUSED] / speech, np.nan)
    raise ValueError(f"unknown metric {metric!r}")


def frame_metric(ref_frames: np.ndarray, hyp_frames: np.ndarray, metric: str = "lder") -> float:
    cat = frame_categories(ref_frames, hyp_frames)
    if cat.size == 0:
        raise UndefinedMetricError("empty frame sequences")
    value = float(_metric_from_counts(np.bincount(cat, minlength=5), metric.lower()))
    if math.isnan(value):
        raise UndefinedMetricError("no hypothesized speech frames; LER undefined")
    return value


def bootstrap_distribution(
    ref_frames: np.ndarray,
    hyp_frames: np.ndarray,
    metric: str = "lder",
    n: int = 1000,
    seed: int = 0,
) -> np.ndarray:
    """Metric values over ``n`` iid frame resamples.

    Both metrics depend only on how many frames fall in each of five
    categories (correct, confused, missed, false alarm, silent), so drawing
    N frames with replacement is the same as one multinomial draw of the
    category counts; that is what is sampled here.
    """
    if n < 100:
        raise ValueError("bootstrap needs n >= 100 resamples")
    cat = frame_categories(ref_frames, hyp_frames)
    N = cat.size
    if N == 0:
        raise UndefinedMetricError("empty frame sequences")
    probs = np.bincount(cat, minlength=5) / N
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(N, probs, size=n)
    return _metric_from_counts(counts, metric.lower())


def bootstrap_ci(
    ref_frames: np.ndarray,
    hyp_frames: np.ndarray,
    metric: str = "lder",
    n: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile interval (linear interpolation) over frame resamples."""
    values = bootstrap_distribution(ref_frames, hyp_frames, metric, n, seed)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise UndefinedMetricError("metric undefined on every resample")
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(values, [100 * alpha, 100 * (1 - alpha)], method="linear")
    return float(low), float(high)


@dataclass
class ReportRow:
    method: str
    lder: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    lc: float | None = None
    ms: float | None = None
    fa: float | None = None
    ler: float | None = None
    wer: float | None = None

    @classmethod
    def from_report(cls, method: str, report: MetricReport, wer_value: float | None = None) -> ReportRow:
        return cls(method, report.lder, report.ci_low, report.ci_high, report.lc, report.ms, report.fa, report.ler, wer_value)

    def cells(self) -> list[str]:
        def pct(v: float | None) -> str:
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.2f}"

        values = (self.lder, self.ci_low, self.ci_high, self.lc, self.ms, self.fa, self.ler, self.wer)
        return [self.method, *(pct(v) for v in values)]


def rows_to_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())
    return buf.getvalue()


def rows_to_json(rows: Iterable[ReportRow]) -> str:
    payload = []
    for row in rows:
        cells = row.cells()
        payload.append({col: (cells[k] if k == 0 else (float(cells[k]) if cells[k] else None)) for k, col in enumerate(REPORT_COLUMNS)})
    return json.dumps(payload, indent=2) + "\n"
