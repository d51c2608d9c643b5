"""RTTM reading and writing.

Lines are ``<TYPE> <file-id> 1 <tbeg> <tdur> <NA> <NA> <name> <NA> <NA>``
with times printed as ``%.3f``. ``SPEAKER`` lines carry speaker (or VAD)
annotations, ``LANGUAGE`` lines carry the language id in the name field.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from pathlib import Path

from .errors import DataError
from .timeline import LabeledAnnotation, Segment, Timeline

SPEECH_NAME = "speech"
_TYPES = {"speaker": "SPEAKER", "language": "LANGUAGE"}


def format_line(kind: str, file_id: str, seg: Segment, name: str) -> str:
    return f"{_TYPES[kind]} {file_id} 1 {seg.start:.3f} {seg.duration():.3f} <NA> <NA> {name} <NA> <NA>"


def format_rttm(annotations: Iterable[LabeledAnnotation]) -> str:
    lines = []
    for ann in annotations:
        lines.extend(format_line(ann.kind, ann.file_id, seg, lab) for seg, lab in ann)
    return "".join(line + "\n" for line in lines)


def write_rttm(path: str | Path, annotations: Iterable[LabeledAnnotation]) -> None:
    Path(path).write_text(format_rttm(annotations))


def timeline_annotation(timeline: Timeline, file_id: str) -> LabeledAnnotation:
    """VAD output as a speaker annotation with the pseudo-speaker ``speech``."""
    return LabeledAnnotation(
        tuple((seg, SPEECH_NAME) for seg in timeline), (SPEECH_NAME,), file_id, "speaker"
    )


def parse_rttm(
    text: str, *, kind: str | None = None, label_space: Sequence[str] = ()
) -> dict[str, dict[str, LabeledAnnotation]]:
    """Parse RTTM text into ``{kind: {file_id: annotation}}``.

    Lines of other types (e.g. ``SPKR-INFO``) are ignored. When ``kind`` is
    given only that type is returned.
    """
    rows: dict[str, dict[str, list]] = {}
    wanted = {v: k for k, v in _TYPES.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith((";", "#")):
            continue
        fields = line.split()
        if fields[0] not in wanted:
            continue
        if len(fields) < 8:
            raise DataError(f"RTTM line {lineno}: expected at least 8 fields, got {len(fields)}")
        try:
            start, dur = float(fields[3]), float(fields[4])
        except ValueError as exc:
            raise DataError(f"RTTM line {lineno}: bad time field ({exc})") from None
        if dur <= 0:
            continue
        rows.setdefault(wanted[fields[0]], {}).setdefault(fields[1], []).append(
            (start, start + dur, fields[7])
        )
    out: dict[str, dict[str, LabeledAnnotation]] = {}
    for k, files in rows.items():
        if kind is not None and k != kind:
            continue
        space = label_space if k == "language" else ()
        out[k] = {
            fid: LabeledAnnotation.from_tuples(items, label_space=space, file_id=fid, kind=k)
            for fid, items in files.items()
        }
    return out


def read_rttm(
    path: str | Path, *, kind: str | None = None, label_space: Sequence[str] = ()
) -> dict[str, dict[str, LabeledAnnotation]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return parse_rttm(text, kind=kind, label_space=label_space)
