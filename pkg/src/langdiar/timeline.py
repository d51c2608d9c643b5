"""Interval algebra over real-valued seconds.

Segments, unlabeled timelines and labeled annotations are immutable values;
every operation here is a pure function. Quantization to frames only happens
in :func:`to_frames`.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, InvalidSegmentError, LabelSpaceError

MERGE_TOLERANCE = 1e-6
NON_SPEECH = -1


@dataclass(frozen=True, order=True)
class Segment:
    start: float
    end: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise InvalidSegmentError(f"non-finite segment ({self.start}, {self.end})")
        if self.start < 0:
            raise InvalidSegmentError(f"negative start in ({self.start}, {self.end})")
        if self.end <= self.start:
            raise InvalidSegmentError(f"segment end <= start: ({self.start}, {self.end})")

    def duration(self) -> float:
        return self.end - self.start

    def overlap(self, other: Segment) -> float:
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))


def _as_segment(item: Segment | tuple[float, float]) -> Segment:
    if isinstance(item, Segment):
        return item
    start, end = item
    return Segment(float(start), float(end))


@dataclass(frozen=True)
class Timeline:
    """Sorted, non-overlapping, unlabeled segments.

    The constructor checks the invariant; use :func:`normalize` to build one
    from arbitrary segments.
    """

    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        segs = tuple(_as_segment(s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        for prev, cur in zip(segs, segs[1:]):
            if cur.start < prev.end:
                raise InvalidSegmentError(f"timeline not normalized near {prev} / {cur}")

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __bool__(self) -> bool:
        return bool(self.segments)

    def duration(self) -> float:
        return sum(s.duration() for s in self.segments)

    def pairs(self) -> list[tuple[float, float]]:
        return [(s.start, s.end) for s in self.segments]

    @property
    def extent(self) -> float:
        return self.segments[-1].end if self.segments else 0.0


def normalize(segments: Iterable[Segment | tuple[float, float]] | Timeline) -> Timeline:
    """Sorted union of ``segments``; pieces closer than 1e-6 s are merged."""
    segs = sorted(_as_segment(s) for s in segments)
    merged: list[list[float]] = []
    for seg in segs:
        if merged and seg.start - merged[-1][1] < MERGE_TOLERANCE:
            merged[-1][1] = max(merged[-1][1], seg.end)
        else:
            merged.append([seg.start, seg.end])
    return Timeline(tuple(Segment(s, e) for s, e in merged))


def intersect(a: Timeline, b: Timeline) -> Timeline:
    out: list[Segment] = []
    i = j = 0
    sa, sb = a.segments, b.segments
    while i < len(sa) and j < len(sb):
        lo = max(sa[i].start, sb[j].start)
        hi = min(sa[i].end, sb[j].end)
        if hi > lo:
            out.append(Segment(lo, hi))
        if sa[i].end < sb[j].end:
            i += 1
        else:
            j += 1
    return Timeline(tuple(out))


def subtract(a: Timeline, b: Timeline) -> Timeline:
    """Time covered by ``a`` and not by ``b``."""
    out: list[Segment] = []
    j = 0
    sb = b.segments
    for seg in a.segments:
        cur = seg.start
        while j < len(sb) and sb[j].end <= cur:
            j += 1
        k = j
        while k < len(sb) and sb[k].start < seg.end:
            if sb[k].start > cur:
                out.append(Segment(cur, sb[k].start))
            cur = max(cur, sb[k].end)
            if cur >= seg.end:
                break
            k += 1
        if cur < seg.end:
            out.append(Segment(cur, seg.end))
    return Timeline(tuple(out))


def union(a: Timeline, b: Timeline) -> Timeline:
    return normalize([*a.segments, *b.segments])


def complement(timeline: Timeline, total: float) -> Timeline:
    if total <= 0:
        return Timeline()
    return subtract(Timeline((Segment(0.0, total),)), timeline)


@dataclass(frozen=True)
class LabeledAnnotation:
    """Labeled segments for one file, sorted by (start, end).

    ``label_space`` is the declared label domain; its order defines label
    rank (used for tie-breaks). When omitted it is the sorted set of labels
    present.
    """

    entries: tuple[tuple[Segment, str], ...] = ()
    label_space: tuple[str, ...] = ()
    file_id: str = ""
    kind: str = "language"

    def __post_init__(self) -> None:
        entries = tuple((_as_segment(seg), str(lab)) for seg, lab in self.entries)
        entries = tuple(sorted(entries, key=lambda e: (e[0].start, e[0].end, e[1])))
        object.__setattr__(self, "entries", entries)
        space = tuple(self.label_space) or tuple(sorted({lab for _, lab in entries}))
        object.__setattr__(self, "label_space", space)
        unknown = {lab for _, lab in entries} - set(space)
        if unknown:
            raise LabelSpaceError(f"labels {sorted(unknown)} not in label space {list(space)}")

    @classmethod
    def from_tuples(
        cls,
        items: Iterable[tuple[float, float, str]],
        *,
        label_space: Sequence[str] = (),
        file_id: str = "",
        kind: str = "language",
    ) -> LabeledAnnotation:
        return cls(
            tuple((Segment(float(s), float(e)), lab) for s, e, lab in items),
            tuple(label_space),
            file_id,
            kind,
        )

    def __iter__(self) -> Iterator[tuple[Segment, str]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def tuples(self) -> list[tuple[float, float, str]]:
        return [(seg.start, seg.end, lab) for seg, lab in self.entries]

    def labels(self) -> list[str]:
        return sorted({lab for _, lab in self.entries}, key=self.rank)

    def rank(self, label: str) -> int:
        return self.label_space.index(label)

    def support(self) -> Timeline:
        return normalize(seg for seg, _ in self.entries)

    def by_label(self) -> dict[str, Timeline]:
        groups: dict[str, list[Segment]] = {}
        for seg, lab in self.entries:
            groups.setdefault(lab, []).append(seg)
        return {lab: normalize(segs) for lab, segs in groups.items()}

    def end_time(self) -> float:
        return max((seg.end for seg, _ in self.entries), default=0.0)

    def is_flat(self) -> bool:
        ends = [seg.end for seg, _ in self.entries]
        starts = [seg.start for seg, _ in self.entries]
        return all(s >= e for e, s in zip(ends, starts[1:]))

    def replace(self, entries: Iterable[tuple[Segment, str]]) -> LabeledAnnotation:
        return LabeledAnnotation(tuple(entries), self.label_space, self.file_id, self.kind)


def flatten(annotation: LabeledAnnotation) -> LabeledAnnotation:
    """Resolve overlaps: the entry with the earlier start wins, ties go to the
    lower-ranked label. Covered time is unchanged."""
    if annotation.is_flat():
        return annotation
    ordered = sorted(
        annotation.entries,
        key=lambda e: (e[0].start, annotation.rank(e[1]), e[0].end),
    )
    taken = Timeline()
    pieces: list[tuple[Segment, str]] = []
    for seg, lab in ordered:
        own = subtract(Timeline((seg,)), taken)
        pieces.extend((piece, lab) for piece in own)
        taken = union(taken, Timeline((seg,)))
    return annotation.replace(pieces)


def to_frames(
    annotation: LabeledAnnotation,
    frame_rate: float,
    total_duration: float,
    labels: Sequence[str] | None = None,
) -> np.ndarray:
    """Label code per frame, decided at the frame center.

    Codes index into ``labels`` (default: the annotation's label space);
    frames not covered by any entry get :data:`NON_SPEECH`.
    """
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    if annotation.end_time() > total_duration + MERGE_TOLERANCE:
        raise CoverageError(
            f"annotation ends at {annotation.end_time():.3f}s beyond total {total_duration:.3f}s"
        )
    space = list(labels) if labels is not None else list(annotation.label_space)
    index = {lab: k for k, lab in enumerate(space)}
    n = int(math.ceil(total_duration * frame_rate - 1e-9))
    frames = np.full(n, NON_SPEECH, dtype=np.int64)
    # Reverse order so that, for unflattened input, earlier entries win.
    for seg, lab in reversed(flatten(annotation).entries):
        if lab not in index:
            raise LabelSpaceError(f"label {lab!r} not in {space}")
        lo = max(0, math.ceil(seg.start * frame_rate - 0.5))
        hi = min(n, math.ceil(seg.end * frame_rate - 0.5))
        frames[lo:hi] = index[lab]
    return frames


def timeline_to_frames(timeline: Timeline, frame_rate: float, total_duration: float) -> np.ndarray:
    """Boolean speech mask by the same frame-center rule as :func:`to_frames`."""
    n = int(math.ceil(total_duration * frame_rate - 1e-9))
    mask = np.zeros(n, dtype=bool)
    for seg in timeline:
        lo = max(0, math.ceil(seg.start * frame_rate - 0.5))
        hi = min(n, math.ceil(seg.end * frame_rate - 0.5))
        mask[lo:hi] = True
    return mask


def mask_to_timeline(mask: np.ndarray, frame_rate: float, offset: float = 0.0, end: float | None = None) -> Timeline:
    """Timeline of frames set in ``mask``; frame j spans [offset + j/fr, offset + (j+1)/fr)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Timeline()
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    limit = end if end is not None else offset + len(mask) / frame_rate
    segs = []
    for lo, hi in zip(edges[::2], edges[1::2]):
        s = offset + lo / frame_rate
        e = min(offset + hi / frame_rate, limit)
        if e > s:
            segs.append(Segment(s, e))
    return normalize(segs)

