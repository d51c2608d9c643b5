"""Routing language segments to per-language transcription clients.

A client receives one request per segment (audio span plus language) and
returns a token sequence or raises :class:`TranscriptionError`.
"""

from __future__ import annotations

import base64
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Protocol

import httpx
import numpy as np

from ..audio import AudioBuffer
from ..errors import TranscriptionError
from ..timeline import LabeledAnnotation, Segment
from .config import ClientConfig

log = logging.getLogger(__name__)

FALLBACK = "*"


class TranscriptionClient(Protocol):
    def transcribe(self, audio: AudioBuffer, span: Segment, language: str, file_id: str = "") -> list[str]: ...


@dataclass(frozen=True)
class MockClient:
    """Deterministic tokens laid on a fixed absolute-time grid.

    Grid slot k covers [k / word_rate, (k + 1) / word_rate); a request
    returns ``<language>:<k>`` for every slot whose center falls inside the
    span. Transcribing the reference segmentation therefore yields a usable
    reference transcript, and wrong language labels surface as
    substitutions.
    """

    word_rate: float = 2.0

    def transcribe(self, audio: AudioBuffer, span: Segment, language: str, file_id: str = "") -> list[str]:
        first = math.ceil(span.start * self.word_rate - 0.5)
        last = math.ceil(span.end * self.word_rate - 0.5)
        return [f"{language}:{k}" for k in range(first, last)]


@dataclass
class HttpClient:
    """POSTs ``{file_id, language, start, end, sample_rate, pcm16}`` (base64 PCM16)
    and expects ``{"tokens": [...]}`` back."""

    url: str
    timeout: float = 30.0
    transport: httpx.BaseTransport | None = None

    def transcribe(self, audio: AudioBuffer, span: Segment, language: str, file_id: str = "") -> list[str]:
        piece = audio.span(span.start, span.end).samples
        pcm = np.clip(np.round(piece * 32768.0), -32768, 32767).astype("<i2").tobytes()
        payload = {
            "file_id": file_id,
            "language": language,
            "start": span.start,
            "end": span.end,
            "sample_rate": audio.sample_rate,
            "pcm16": base64.b64encode(pcm).decode("ascii"),
        }
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                resp = client.post(self.url, json=payload)
                resp.raise_for_status()
                data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise TranscriptionError(f"{self.url}: {exc}") from None
        tokens = data.get("tokens") if isinstance(data, dict) else None
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise TranscriptionError(f"{self.url}: response lacks a string 'tokens' list")
        return tokens


def build_clients(configs: Mapping[str, ClientConfig]) -> dict[str, TranscriptionClient]:
    clients: dict[str, TranscriptionClient] = {}
    for lang, cfg in configs.items():
        if cfg.kind == "mock":
            clients[lang] = MockClient(cfg.word_rate)
        else:
            clients[lang] = HttpClient(cfg.url, cfg.timeout)
    return clients


@dataclass
class SegmentRecord:
    start: float
    end: float
    language: str
    n_tokens: int = 0
    error: str | None = None


@dataclass
class Transcript:
    file_id: str
    tokens: list[str] = field(default_factory=list)
    segments: list[SegmentRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(s.error for s in self.segments)


def merge_same_label(annotation: LabeledAnnotation, max_gap: float = 0.0) -> LabeledAnnotation:
    """Join consecutive entries with the same label separated by at most ``max_gap`` seconds."""
    merged: list[list] = []
    for seg, lab in annotation:
        if merged and merged[-1][2] == lab and seg.start - merged[-1][1] <= max_gap + 1e-9:
            merged[-1][1] = max(merged[-1][1], seg.end)
        else:
            merged.append([seg.start, seg.end, lab])
    return annotation.replace((Segment(s, e), lab) for s, e, lab in merged)


def route_and_transcribe(
    annotation: LabeledAnnotation,
    audio: AudioBuffer,
    clients: Mapping[str, TranscriptionClient],
    *,
    missing: str = "skip",
    merge: bool = False,
) -> Transcript:
    """Send every language segment to its client and join the tokens in time order.

    ``clients`` may hold a ``"*"`` entry used for languages without their
    own client. With ``missing="fail"`` an unserved language raises;
    with ``"skip"`` the segment is left out and a warning recorded. A
    failing client only loses its own segment.
    """
    if merge:
        annotation = merge_same_label(annotation)
    out = Transcript(annotation.file_id)
    for seg, lang in annotation:
        client = clients.get(lang, clients.get(FALLBACK))
        if client is None:
            msg = f"{annotation.file_id}: no transcription client for language {lang!r}"
            if missing == "fail":
                raise TranscriptionError(msg)
            log.warning("%s; segment %.3f-%.3f skipped", msg, seg.start, seg.end)
            out.warnings.append(msg)
            continue
        record = SegmentRecord(seg.start, seg.end, lang)
        try:
            tokens = client.transcribe(audio, seg, lang, annotation.file_id)
        except TranscriptionError as exc:
            record.error = str(exc)
            log.error("%s: segment %.3f-%.3f failed: %s", annotation.file_id, seg.start, seg.end, exc)
        else:
            record.n_tokens = len(tokens)
            out.tokens.extend(tokens)
        out.segments.append(record)
    return out
