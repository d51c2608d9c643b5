"""Chunk-wise speaker diarization with cross-chunk constrained clustering.

The recording is cut into fixed-length chunks, a local diarizer yields a
small number of speaker slots per chunk (activity track plus embedding),
and constrained agglomerative clustering links slots across chunks while
never merging two slots of the same chunk.
"""

from __future__ import annotations

import logging
import zlib
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .audio import FRAME_RATE, AudioBuffer, log_mel, n_frames
from .errors import ConfigError, DataError, EmptySupportError
from .segmenters import VadConfig, energy_vad
from .timeline import (
    LabeledAnnotation,
    Segment,
    Timeline,
    flatten,
    intersect,
    mask_to_timeline,
    normalize,
    timeline_to_frames,
)

log = logging.getLogger(__name__)

DEFAULT_SLOTS = 3


@dataclass(frozen=True, eq=False)
class Chunk:
    index: int
    span: Segment
    recording: AudioBuffer

    @property
    def audio(self) -> AudioBuffer:
        return self.recording.span(self.span.start, self.span.end)

    @property
    def n_frames(self) -> int:
        return n_frames(self.span.duration(), FRAME_RATE)


@dataclass(frozen=True, eq=False)
class ChunkResult:
    """Local diarization of one chunk.

    ``slot_activity`` has shape (slots, frames) at 100 Hz from the chunk
    start. ``slot_support`` optionally carries exact per-slot timelines (in
    recording time) for diarizers that know them; otherwise supports are
    derived by thresholding the tracks.
    """

    chunk_index: int
    span: Segment
    slot_activity: np.ndarray
    slot_embedding: dict[int, np.ndarray] = field(default_factory=dict)
    active_mask: tuple[bool, ...] = ()
    slot_support: tuple[Timeline, ...] | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        act = np.asarray(self.slot_activity, dtype=np.float64)
        if act.ndim != 2:
            raise DataError("slot_activity must be (slots, frames)")
        if act.size and (act.min() < 0 or act.max() > 1):
            raise DataError("activity probabilities must lie in [0, 1]")
        object.__setattr__(self, "slot_activity", act)
        if set(self.slot_embedding) != {k for k, on in enumerate(self.active_mask) if on}:
            raise DataError("embeddings must be present exactly for active slots")

    @property
    def slots(self) -> int:
        return self.slot_activity.shape[0]

    def slot_timeline(self, slot: int, threshold: float = 0.5) -> Timeline:
        if self.slot_support is not None:
            return self.slot_support[slot]
        return mask_to_timeline(
            self.slot_activity[slot] >= threshold, FRAME_RATE, offset=self.span.start, end=self.span.end
        )


class LocalDiarizer(Protocol):
    slots: int

    def diarize_chunk(self, chunk: Chunk, threshold: float = 0.5) -> ChunkResult: ...


class Embedder(Protocol):
    dim: int

    def embed(self, audio: AudioBuffer, support: Timeline) -> np.ndarray: ...


def chunk_audio(audio: AudioBuffer, chunk_len: float = 30.0) -> list[Chunk]:
    if chunk_len <= 0:
        raise ConfigError("chunk_len must be positive")
    total = audio.duration
    chunks, k = [], 0
    while k * chunk_len < total - 1e-9:
        start = k * chunk_len
        chunks.append(Chunk(k, Segment(start, min(total, (k + 1) * chunk_len)), audio))
        k += 1
    return chunks


def local_diarize(chunk: Chunk, diarizer: LocalDiarizer, threshold: float = 0.5) -> ChunkResult:
    return diarizer.diarize_chunk(chunk, threshold)


def extract_embedding(audio: AudioBuffer, support: Timeline, extractor: Embedder) -> np.ndarray:
    if not support or support.duration() <= 0:
        raise EmptySupportError("cannot embed an empty support")
    vec = np.asarray(extractor.embed(audio, support), dtype=np.float64)
    if vec.shape != (extractor.dim,) or not np.all(np.isfinite(vec)):
        raise DataError(f"embedder returned shape {vec.shape}, expected ({extractor.dim},) finite")
    return vec


def _support_frames(support: Timeline, origin: float, total: float) -> np.ndarray:
    shifted = Timeline(tuple(Segment(s.start - origin, s.end - origin) for s in support if s.end > origin))
    return timeline_to_frames(shifted, FRAME_RATE, total)


@dataclass(frozen=True)
class LogMelStatsEmbedder:
    """Mean and standard deviation of log-mel band energies over the support."""

    n_mels: int = 8

    @property
    def dim(self) -> int:
        return 2 * self.n_mels

    def frames(self, audio: AudioBuffer, support: Timeline) -> np.ndarray:
        lo, hi = support.segments[0].start, support.extent
        feats = log_mel(audio.span(lo, hi), self.n_mels)
        mask = _support_frames(support, lo, hi - lo)[: len(feats)]
        if not mask.any():
            mid = min(len(feats) - 1, int((hi - lo) * FRAME_RATE / 2))
            mask = np.zeros(len(feats), dtype=bool)
            mask[max(mid, 0)] = True
        return feats[mask]

    def embed(self, audio: AudioBuffer, support: Timeline) -> np.ndarray:
        if not support:
            raise EmptySupportError("cannot embed an empty support")
        f = self.frames(audio, support)
        return np.concatenate([f.mean(axis=0), f.std(axis=0)])


def label_embedding(label: str, dim: int = 128) -> np.ndarray:
    """Deterministic random unit vector per label (oracle speaker identity)."""
    rng = np.random.default_rng(zlib.crc32(label.encode("utf-8")))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class OracleLocalDiarizer:
    """Reads speaker turns from a reference annotation restricted to each chunk.

    Keeps the ``slots`` longest-talking local speakers, as a fixed-slot local
    model would; dropped speakers are reported in ``ChunkResult.warnings``.
    Without an embedder, slot embeddings identify the reference speaker.
    """

    def __init__(self, reference: LabeledAnnotation, slots: int = DEFAULT_SLOTS, embedder: Embedder | None = None, dim: int = 128):
        if slots < 1:
            raise ConfigError("slots must be >= 1")
        self.reference = reference
        self.slots = slots
        self.embedder = embedder
        self.dim = dim
        self._by_label = reference.by_label()

    def diarize_chunk(self, chunk: Chunk, threshold: float = 0.5) -> ChunkResult:
        span_tl = Timeline((chunk.span,))
        local = []
        for label, tl in self._by_label.items():
            part = intersect(tl, span_tl)
            if part:
                local.append((label, part))
        local.sort(key=lambda lt: (-lt[1].duration(), self.reference.rank(lt[0])))
        warnings = ()
        if len(local) > self.slots:
            dropped = [lab for lab, _ in local[self.slots :]]
            msg = f"chunk {chunk.index}: {len(local)} speakers exceed {self.slots} slots; dropped {dropped}"
            log.warning(msg)
            warnings = (msg,)
            local = local[: self.slots]
        local.sort(key=lambda lt: (lt[1].segments[0].start, self.reference.rank(lt[0])))
        T = chunk.n_frames
        act = np.zeros((self.slots, T))
        supports = [Timeline()] * self.slots
        embeddings = {}
        for k, (label, part) in enumerate(local):
            act[k] = _support_frames(part, chunk.span.start, chunk.span.duration())[:T]
            supports[k] = part
            if self.embedder is None:
                embeddings[k] = label_embedding(label, self.dim)
            else:
                embeddings[k] = extract_embedding(chunk.recording, part, self.embedder)
        mask = tuple(k < len(local) for k in range(self.slots))
        return ChunkResult(chunk.index, chunk.span, act, embeddings, mask, tuple(supports), warnings)


class ReferenceLocalDiarizer:
    """Energy VAD followed by clustering of short speech blocks into at most
    ``slots`` local speakers; frames are then assigned to the nearest kept
    cluster using lightly smoothed log-mel features."""

    def __init__(
        self,
        slots: int = DEFAULT_SLOTS,
        embedder: Embedder | None = None,
        vad: VadConfig = VadConfig(),
        block_frames: int = 50,
        block_threshold: float = 2.5,
        smooth_frames: int = 25,
        n_mels: int = 8,
    ):
        if slots < 1:
            raise ConfigError("slots must be >= 1")
        self.slots = slots
        self.embedder = embedder or LogMelStatsEmbedder(n_mels)
        self.vad = vad
        self.block_frames = block_frames
        self.block_threshold = block_threshold
        self.smooth_frames = smooth_frames
        self.n_mels = n_mels

    def _blocks(self, speech: np.ndarray) -> list[np.ndarray]:
        blocks = []
        idx = np.flatnonzero(speech)
        if idx.size == 0:
            return blocks
        runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
        for run in runs:
            n = max(1, round(len(run) / self.block_frames))
            blocks.extend(np.array_split(run, n))
        return blocks

    def diarize_chunk(self, chunk: Chunk, threshold: float = 0.5) -> ChunkResult:
        T = chunk.n_frames
        audio = chunk.audio
        act = np.zeros((self.slots, T))
        speech = timeline_to_frames(energy_vad(audio, self.vad), FRAME_RATE, chunk.span.duration())[:T]
        if not speech.any():
            return ChunkResult(chunk.index, chunk.span, act, {}, (False,) * self.slots)
        feats = log_mel(audio, self.n_mels)[:T]
        blocks = self._blocks(speech)
        vectors = np.stack([feats[b].mean(axis=0) for b in blocks])
        assign = constrained_ahc(
            list(enumerate(vectors)), set(), self.block_threshold, metric="euclidean"
        )
        sizes: dict[int, int] = {}
        for i, c in assign.items():
            sizes[c] = sizes.get(c, 0) + len(blocks[i])
        kept = sorted(sizes, key=lambda c: (-sizes[c], c))[: self.slots]
        centroids = np.stack(
            [np.concatenate([feats[blocks[i]] for i, c in assign.items() if c == k]).mean(axis=0) for k in kept]
        )
        smoothed = _moving_average(feats, self.smooth_frames)
        dist = ((smoothed[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        label = np.argmin(dist, axis=1)
        # order slots by first appearance for a stable slot layout
        order = []
        for lab in label[speech]:
            if lab not in order:
                order.append(int(lab))
        embeddings = {}
        for slot, lab in enumerate(order):
            act[slot] = (speech & (label == lab)).astype(np.float64)
        mask = []
        for slot in range(self.slots):
            tl = mask_to_timeline(act[slot] >= threshold, FRAME_RATE, offset=chunk.span.start, end=chunk.span.end)
            active = bool(tl)
            mask.append(active)
            if active:
                embeddings[slot] = extract_embedding(chunk.recording, tl, self.embedder)
        return ChunkResult(chunk.index, chunk.span, act, embeddings, tuple(mask))


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centered mean over ``width`` rows, truncated at the edges; keeps ``len(x)`` rows."""
    n = len(x)
    if width <= 1 or n == 0:
        return x
    csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.clip(idx - width // 2, 0, n)
    hi = np.clip(idx - width // 2 + width, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def pairwise_distance(x: np.ndarray, metric: str = "cosine") -> np.ndarray:
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        norms[norms == 0] = 1.0
        u = x / norms[:, None]
        d = 1.0 - np.clip(u @ u.T, -1.0, 1.0)
    elif metric == "euclidean":
        sq = (x**2).sum(axis=1)
        d = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0))
    else:
        raise ConfigError(f"unknown distance metric {metric!r}")
    np.fill_diagonal(d, 0.0)
    return d


def constrained_ahc(
    items: Sequence[tuple[Hashable, np.ndarray]],
    cannot: Iterable[Iterable[Hashable]],
    linkage_threshold: float,
    *,
    metric: str = "cosine",
    linkage: str = "average",
) -> dict[Hashable, int]:
    """Agglomerative clustering that refuses merges joining a cannot-link pair.

    Merging stops once the closest permitted pair is farther than
    ``linkage_threshold``. Equal distances are broken by the smallest
    (min id, max id) of the clusters' representatives, where a cluster's
    representative is its smallest item id. Returns item id -> cluster
    index, numbered in order of each cluster's smallest id.
    """
    if linkage not in ("average", "complete", "single"):
        raise ConfigError(f"unknown linkage {linkage!r}")
    if not items:
        return {}
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate item ids")
    vecs = [np.asarray(v, dtype=np.float64) for _, v in items]
    dims = {v.shape for v in vecs}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DataError(f"embedding dimension mismatch: {sorted(dims)}")
    order = sorted(range(len(ids)), key=lambda k: ids[k])
    ids = [ids[k] for k in order]
    X = np.stack([vecs[k] for k in order])
    n = len(ids)
    pos = {item: k for k, item in enumerate(ids)}
    D = pairwise_distance(X, metric)
    C = np.zeros((n, n), dtype=bool)
    for pair in cannot:
        a, b = tuple(pair)
        if a in pos and b in pos:
            C[pos[a], pos[b]] = C[pos[b], pos[a]] = True

    alive = list(range(n))  # cluster key = smallest member position
    size = {k: 1 for k in alive}
    members = {k: [k] for k in alive}
    while len(alive) > 1:
        best = None
        for x, i in enumerate(alive):
            for j in alive[x + 1 :]:
                if C[i, j]:
                    continue
                key = (D[i, j], i, j)
                if best is None or key < best:
                    best = key
        if best is None or best[0] > linkage_threshold:
            break
        _, i, j = best
        for k in alive:
            if k in (i, j):
                continue
            if linkage == "average":
                dk = (size[i] * D[k, i] + size[j] * D[k, j]) / (size[i] + size[j])
            elif linkage == "complete":
                dk = max(D[k, i], D[k, j])
            else:
                dk = min(D[k, i], D[k, j])
            D[k, i] = D[i, k] = dk
            C[k, i] = C[i, k] = C[k, i] or C[k, j]
        size[i] += size.pop(j)
        members[i].extend(members.pop(j))
        alive.remove(j)
    out = {}
    for label, key in enumerate(sorted(alive)):
        for m in members[key]:
            out[ids[m]] = label
    return out


def diarize(
    audio: AudioBuffer,
    local_diarizer: LocalDiarizer,
    *,
    chunk_len: float = 30.0,
    speech_threshold: float = 0.5,
    linkage_threshold: float = 0.3,
    metric: str = "cosine",
    linkage: str = "average",
    file_id: str = "",
) -> LabeledAnnotation:
    """Speaker annotation with global labels ``spk0``, ``spk1``, ..."""
    results = [local_diarize(c, local_diarizer, speech_threshold) for c in chunk_audio(audio, chunk_len)]
    return link_chunks(
        results, speech_threshold=speech_threshold, linkage_threshold=linkage_threshold,
        metric=metric, linkage=linkage, file_id=file_id,
    )


def link_chunks(
    results: Sequence[ChunkResult],
    *,
    speech_threshold: float = 0.5,
    linkage_threshold: float = 0.3,
    metric: str = "cosine",
    linkage: str = "average",
    file_id: str = "",
) -> LabeledAnnotation:
    items, supports, cannot = [], {}, set()
    for res in results:
        local_ids = []
        for slot, active in enumerate(res.active_mask):
            if not active:
                continue
            tl = res.slot_timeline(slot, speech_threshold)
            if not tl:
                continue
            item = (res.chunk_index, slot)
            items.append((item, res.slot_embedding[slot]))
            supports[item] = tl
            local_ids.append(item)
        cannot.update(frozenset((a, b)) for x, a in enumerate(local_ids) for b in local_ids[x + 1 :])
    assign = constrained_ahc(items, cannot, linkage_threshold, metric=metric, linkage=linkage)
    n_spk = max(assign.values(), default=-1) + 1
    labels = tuple(f"spk{k}" for k in range(n_spk))
    grouped: dict[int, list[Segment]] = {}
    for item, cluster in assign.items():
        grouped.setdefault(cluster, []).extend(supports[item])
    entries = [(seg, labels[c]) for c, segs in grouped.items() for seg in normalize(segs)]
    return LabeledAnnotation(tuple(entries), labels, file_id, "speaker")


def speaker_change_segments(speakers: LabeledAnnotation) -> Timeline:
    """Maximal constant-speaker runs, identities dropped."""
    runs: list[list] = []
    for seg, lab in flatten(speakers):
        if runs and runs[-1][2] == lab and seg.start - runs[-1][1] < 1e-6:
            runs[-1][1] = max(runs[-1][1], seg.end)
        else:
            runs.append([seg.start, seg.end, lab])
    return Timeline(tuple(Segment(s, e) for s, e, _ in runs))
