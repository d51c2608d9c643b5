"""Spoken language identification: segment and frame classifiers, output
masking, posterior smoothing and frame-to-segment decoding.

Two families of classifiers share each contract: oracles that read a
reference annotation, and a reference diagonal-Gaussian model over
log-mel band energies.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .audio import FRAME_RATE, AudioBuffer, log_mel, n_frames
from .errors import ConfigError, ContractViolationError, MissingLanguageError
from .timeline import LabeledAnnotation, Segment, Timeline, intersect, to_frames

VARIANCE_FLOOR = 1e-4
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class PosteriorTrack:
    matrix: np.ndarray
    language_ids: tuple[str, ...]
    frame_rate: float = FRAME_RATE

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(self.language_ids):
            raise ValueError(f"posterior matrix shape {m.shape} does not match {len(self.language_ids)} languages")
        if m.size:
            if m.min() < -1e-12 or m.max() > 1 + 1e-9:
                raise ValueError("posteriors must lie in [0, 1]")
            if np.abs(m.sum(axis=1) - 1.0).max() > 1e-6:
                raise ValueError("posterior rows must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "language_ids", tuple(self.language_ids))

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def with_matrix(self, matrix: np.ndarray) -> PosteriorTrack:
        return PosteriorTrack(matrix, self.language_ids, self.frame_rate)


@dataclass(frozen=True, eq=False)
class LanguageModelRef:
    """Per-language diagonal Gaussian over log-mel frames (uniform prior)."""

    languages: tuple[str, ...]
    means: np.ndarray
    variances: np.ndarray
    n_mels: int = 8

    def frame_loglik(self, feats: np.ndarray) -> np.ndarray:
        """(T, L) log-likelihoods."""
        diff = feats[:, None, :] - self.means[None, :, :]
        return -0.5 * (np.log(2 * np.pi * self.variances)[None] + diff**2 / self.variances[None]).sum(axis=2)


@dataclass(frozen=True)
class ClassMask:
    allowed: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.allowed:
            raise ConfigError("class mask must allow at least one language")
        object.__setattr__(self, "allowed", tuple(self.allowed))

    def indices(self, language_ids: Sequence[str]) -> np.ndarray:
        missing = [a for a in self.allowed if a not in language_ids]
        if missing:
            raise ConfigError(f"mask languages {missing} not in {list(language_ids)}")
        return np.array(sorted(language_ids.index(a) for a in self.allowed))


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def train_reference_classifier(
    labeled_audio: Iterable[tuple[AudioBuffer, LabeledAnnotation]],
    languages: Sequence[str] | None = None,
    n_mels: int = 8,
    min_seconds: float = 1.0,
) -> LanguageModelRef:
    """Maximum-likelihood Gaussians from per-frame features of labeled speech.

    Per-file sums are combined with ``math.fsum`` so the result does not
    depend on file order.
    """
    stats: dict[str, list[tuple[np.ndarray, np.ndarray, int]]] = {}
    pairs = list(labeled_audio)
    if languages is None:
        languages = sorted({lab for _, ann in pairs for lab in ann.labels()})
    languages = tuple(languages)
    for audio, ann in pairs:
        feats = log_mel(audio, n_mels)
        codes = to_frames(ann, FRAME_RATE, audio.duration, labels=languages)[: len(feats)]
        for k, lang in enumerate(languages):
            f = feats[codes == k]
            if len(f):
                stats.setdefault(lang, []).append((f.sum(axis=0), (f**2).sum(axis=0), len(f)))
    means, variances = [], []
    for lang in languages:
        parts = stats.get(lang, [])
        count = sum(c for _, _, c in parts)
        if count < min_seconds * FRAME_RATE:
            raise MissingLanguageError(f"language {lang!r} has {count / FRAME_RATE:.2f}s of speech, need {min_seconds}s")
        s1 = np.array([math.fsum(p[0][d] for p in parts) for d in range(n_mels)])
        s2 = np.array([math.fsum(p[1][d] for p in parts) for d in range(n_mels)])
        mu = s1 / count
        means.append(mu)
        variances.append(np.maximum(s2 / count - mu**2, VARIANCE_FLOOR))
    return LanguageModelRef(languages, np.array(means), np.array(variances), n_mels)


class SegmentClassifier(Protocol):
    languages: tuple[str, ...]

    def classify(self, audio: AudioBuffer, segment: Segment) -> np.ndarray: ...


class FrameClassifier(Protocol):
    languages: tuple[str, ...]

    def posteriors(self, audio: AudioBuffer) -> PosteriorTrack: ...


class ReferenceSegmentClassifier:
    """Softmax of the mean per-frame log-likelihood over the segment."""

    def __init__(self, model: LanguageModelRef):
        self.model = model
        self.languages = model.languages

    def classify(self, audio: AudioBuffer, segment: Segment) -> np.ndarray:
        sub = audio.span(segment.start, segment.end)
        feats = log_mel(sub, self.model.n_mels)
        if len(feats) == 0:
            return np.full(len(self.languages), 1.0 / len(self.languages))
        return _softmax(self.model.frame_loglik(feats).mean(axis=0))


class OracleSegmentClassifier:
    """One-hot on the reference language covering most of the segment."""

    def __init__(self, reference: LabeledAnnotation, languages: Sequence[str] | None = None):
        self.languages = tuple(languages or reference.label_space)
        self._by_label = reference.by_label()

    def classify(self, audio: AudioBuffer, segment: Segment) -> np.ndarray:
        seg_tl = Timeline((segment,))
        overlap = np.array(
            [intersect(self._by_label[lang], seg_tl).duration() if lang in self._by_label else 0.0 for lang in self.languages]
        )
        if overlap.max() <= 0:
            return np.full(len(self.languages), 1.0 / len(self.languages))
        out = np.zeros(len(self.languages))
        out[int(np.argmax(overlap))] = 1.0
        return out


class ReferenceFrameClassifier:
    """Per-frame Gaussian log-likelihoods turned into posteriors.

    Frames of digital silence (every band below ``silence_level``) get a
    uniform row rather than an arbitrary extrapolated decision.
    """

    def __init__(self, model: LanguageModelRef, silence_level: float = -20.0):
        self.model = model
        self.languages = model.languages
        self.silence_level = silence_level

    def posteriors(self, audio: AudioBuffer) -> PosteriorTrack:
        feats = log_mel(audio, self.model.n_mels)
        if len(feats) == 0:
            return PosteriorTrack(np.zeros((0, len(self.languages))), self.languages)
        post = _softmax(self.model.frame_loglik(feats), axis=1)
        post[feats.max(axis=1) < self.silence_level] = 1.0 / len(self.languages)
        return PosteriorTrack(post, self.languages)


class OracleFrameClassifier:
    """One-hot rows from the reference annotation; non-speech rows are uniform."""

    def __init__(self, reference: LabeledAnnotation, languages: Sequence[str] | None = None):
        self.reference = reference
        self.languages = tuple(languages or reference.label_space)

    def posteriors(self, audio: AudioBuffer) -> PosteriorTrack:
        codes = to_frames(self.reference, FRAME_RATE, audio.duration, labels=self.languages)
        L = len(self.languages)
        m = np.full((len(codes), L), 1.0 / L)
        speech = codes >= 0
        m[speech] = 0.0
        m[np.flatnonzero(speech), codes[speech]] = 1.0
        return PosteriorTrack(m, self.languages)


def classify_segment(
    audio: AudioBuffer,
    segment: Segment,
    classifier: SegmentClassifier,
    *,
    min_len: float = 1.0,
    max_len: float = 20.0,
) -> np.ndarray:
    d = segment.duration()
    if d < min_len - 1e-9 or d > max_len + 1e-9:
        raise ContractViolationError(
            f"segment {segment.start:.3f}-{segment.end:.3f} lasts {d:.3f}s; "
            f"post-process to [{min_len}, {max_len}]s first"
        )
    return classifier.classify(audio, segment)


def frame_posteriors(audio: AudioBuffer, classifier: FrameClassifier) -> PosteriorTrack:
    track = classifier.posteriors(audio)
    expected = n_frames(audio.duration)
    if len(track) != expected:
        raise ContractViolationError(f"frame classifier returned {len(track)} frames, expected {expected}")
    return track


def _mask_matrix(m: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.zeros_like(m)
    kept = m[:, idx]
    total = kept.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        renorm = np.where(total > 0, kept / np.where(total > 0, total, 1.0), 1.0 / len(idx))
    out[:, idx] = renorm
    return out


def mask_posteriors(
    p: np.ndarray | PosteriorTrack,
    mask: ClassMask | Iterable[int],
    language_ids: Sequence[str] | None = None,
):
    """Zero disallowed classes and renormalize; all-zero rows become uniform over the mask.

    ``mask`` is a :class:`ClassMask` of language ids or an iterable of
    column indices.
    """
    if isinstance(p, PosteriorTrack):
        language_ids = p.language_ids
    if isinstance(mask, ClassMask):
        if language_ids is None:
            raise ConfigError("language_ids are required to apply a label mask to a bare vector")
        idx = mask.indices(list(language_ids))
    else:
        idx = np.array(sorted(set(int(i) for i in mask)))
        if idx.size == 0:
            raise ConfigError("class mask must allow at least one class")
    if isinstance(p, PosteriorTrack):
        return p.with_matrix(_mask_matrix(p.matrix, idx) if len(p) else p.matrix)
    vec = np.asarray(p, dtype=np.float64)
    if idx.max() >= vec.shape[-1] or idx.min() < 0:
        raise ConfigError("mask index out of range")
    return _mask_matrix(vec[None, :], idx)[0]


def smooth(track: PosteriorTrack, window: int = 200) -> PosteriorTrack:
    """Centered moving average; near the edges the window is truncated and
    the average taken over the frames actually present.

    For an even window frame i averages frames i - w/2 .. i + w/2 - 1.
    """
    if window < 1:
        raise ConfigError("smoothing window must be >= 1")
    m = track.matrix
    T = len(m)
    if window == 1 or T == 0:
        return track
    before = window // 2
    after = window - 1 - before
    csum = np.vstack([np.zeros((1, m.shape[1])), np.cumsum(m, axis=0)])
    i = np.arange(T)
    lo = np.maximum(0, i - before)
    hi = np.minimum(T, i + after + 1)
    avg = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    avg = np.clip(avg, 0.0, None)
    avg /= avg.sum(axis=1, keepdims=True)
    return track.with_matrix(avg)


def frame_argmax(matrix: np.ndarray) -> np.ndarray:
    """Row argmax with near-ties (within 1e-9) going to the lowest index."""
    if len(matrix) == 0:
        return np.zeros(0, dtype=np.int64)
    best = matrix.max(axis=1, keepdims=True)
    return np.argmax(matrix >= best - TIE_TOLERANCE, axis=1)


def _speech_frame_range(seg: Segment, frame_rate: float, T: int) -> tuple[int, int]:
    lo = min(T, max(0, int(math.floor(seg.start * frame_rate + 1e-9))))
    hi = min(T, max(lo, int(math.ceil(seg.end * frame_rate - 1e-9))))
    return lo, hi


def decode_frames(track: PosteriorTrack, speech: Timeline, file_id: str = "") -> LabeledAnnotation:
    """Label runs of the per-frame argmax inside each speech segment.

    Every frame overlapping a speech segment takes part and run boundaries
    are clipped to the segment, so a segment whose frames all agree is
    reproduced exactly.
    """
    labels = frame_argmax(track.matrix)
    fr = track.frame_rate
    entries: list[tuple[Segment, str]] = []
    for seg in speech:
        lo, hi = _speech_frame_range(seg, fr, len(labels))
        if hi <= lo:
            continue
        run = labels[lo:hi]
        cuts = np.flatnonzero(np.diff(run)) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [len(run)]])
        for a, b in zip(starts, ends):
            s = seg.start if a == 0 else (lo + a) / fr
            e = seg.end if b == len(run) else (lo + b) / fr
            if e > s:
                entries.append((Segment(s, e), track.language_ids[run[a]]))
    return LabeledAnnotation(tuple(entries), track.language_ids, file_id, "language")


def over_segmentation_stats(track: PosteriorTrack, speech: Timeline, margin: float = 0.1) -> dict[str, int]:
    """Label switches inside speech segments and frames whose top-2 posteriors are within ``margin``."""
    labels = frame_argmax(track.matrix)
    switches = close = 0
    for seg in speech:
        lo, hi = _speech_frame_range(seg, track.frame_rate, len(labels))
        if hi <= lo:
            continue
        switches += int(np.count_nonzero(np.diff(labels[lo:hi])))
        if track.matrix.shape[1] > 1:
            top2 = np.sort(track.matrix[lo:hi], axis=1)[:, -2:]
            close += int(np.count_nonzero(top2[:, 1] - top2[:, 0] < margin))
    return {"switches": switches, "close_frames": close}
