"""Speech/non-speech segmentation and segment post-processing."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TypeVar

import numpy as np

from .audio import AudioBuffer, n_frames
from .errors import ConfigError, TilingError
from .timeline import LabeledAnnotation, Segment, Timeline, mask_to_timeline, normalize

_T = TypeVar("_T", Timeline, LabeledAnnotation)


@dataclass(frozen=True)
class VadConfig:
    frame_rate: float = 100.0
    energy_threshold_db: float = -30.0
    speech_activity_threshold: float = 0.5
    hangover: int = 2

    def __post_init__(self) -> None:
        values = (self.frame_rate, self.energy_threshold_db, self.speech_activity_threshold)
        if not all(math.isfinite(v) for v in values) or self.frame_rate <= 0:
            raise ConfigError("VAD thresholds must be finite and frame_rate positive")
        if self.hangover < 0:
            raise ConfigError("hangover must be >= 0")


def frame_log_energy(audio: AudioBuffer, frame_rate: float = 100.0) -> np.ndarray:
    """Mean-square energy in dB over non-overlapping frames (the last one may be partial)."""
    T = n_frames(audio.duration, frame_rate)
    hop = audio.sample_rate / frame_rate
    bounds = np.minimum(np.round(np.arange(T + 1) * hop).astype(np.int64), len(audio))
    x2 = np.concatenate([[0.0], np.cumsum(audio.samples**2)])
    width = np.maximum(bounds[1:] - bounds[:-1], 1)
    power = (x2[bounds[1:]] - x2[bounds[:-1]]) / width
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.maximum(power, 0.0))


def dilate(mask: np.ndarray, frames: int) -> np.ndarray:
    if frames <= 0 or not mask.any():
        return mask
    kernel = np.ones(2 * frames + 1)
    return np.convolve(mask.astype(np.float64), kernel, mode="same") > 0.5


def energy_vad(audio: AudioBuffer, cfg: VadConfig = VadConfig()) -> Timeline:
    """Frames within ``energy_threshold_db`` of the loudest frame are speech."""
    if len(audio) == 0:
        return Timeline()
    db = frame_log_energy(audio, cfg.frame_rate)
    finite = np.isfinite(db)
    if not finite.any():
        return Timeline()
    peak = db[finite].max()
    speech = finite & (db > peak + cfg.energy_threshold_db)
    speech = dilate(speech, cfg.hangover)
    return mask_to_timeline(speech, cfg.frame_rate, end=audio.duration)


def stitch_local_vad(
    chunk_activities: Sequence[np.ndarray],
    threshold: float = 0.5,
    *,
    frame_rate: float = 100.0,
    spans: Sequence[Segment] | None = None,
) -> Timeline:
    """Speech where any local slot is active; no clustering across chunks.

    ``chunk_activities[k]`` has shape (slots, frames). Without ``spans`` the
    chunks are assumed to tile the recording back to back.
    """
    if spans is None:
        spans, cur = [], 0.0
        for act in chunk_activities:
            length = np.shape(act)[-1] / frame_rate
            spans.append(Segment(cur, cur + length) if length > 0 else None)
            cur += length
        spans = [s for s in spans if s is not None]
        chunk_activities = [a for a in chunk_activities if np.shape(a)[-1] > 0]
    if len(spans) != len(chunk_activities):
        raise TilingError("one span per chunk is required")
    for k, span in enumerate(spans):
        if k == 0 and abs(span.start) > 1e-9:
            raise TilingError(f"first chunk starts at {span.start}, expected 0")
        if k and abs(span.start - spans[k - 1].end) > 1e-6:
            raise TilingError(f"chunk {k} starts at {span.start}, previous ends at {spans[k - 1].end}")
    pieces: list[Segment] = []
    for act, span in zip(chunk_activities, spans):
        act = np.atleast_2d(np.asarray(act, dtype=np.float64))
        if act.shape[0] == 0:
            continue
        speech = act.max(axis=0) >= threshold
        pieces.extend(mask_to_timeline(speech, frame_rate, offset=span.start, end=span.end))
    return normalize(pieces)


def _split(seg: Segment, max_len: float) -> list[Segment]:
    d = seg.duration()
    if d <= max_len:
        return [seg]
    n = math.ceil(d / max_len)
    cuts = [seg.start + k * d / n for k in range(n)] + [seg.end]
    return [Segment(a, b) for a, b in zip(cuts, cuts[1:])]


def postprocess_segments(segments: _T, min_len: float = 1.0, max_len: float = 20.0) -> _T:
    """Drop segments shorter than ``min_len``; split longer than ``max_len`` into equal pieces."""
    if min_len >= max_len:
        raise ConfigError(f"min_len ({min_len}) must be below max_len ({max_len})")
    if isinstance(segments, LabeledAnnotation):
        out = [(piece, lab) for seg, lab in segments if seg.duration() >= min_len for piece in _split(seg, max_len)]
        return segments.replace(out)
    return Timeline(tuple(piece for seg in segments if seg.duration() >= min_len for piece in _split(seg, max_len)))
