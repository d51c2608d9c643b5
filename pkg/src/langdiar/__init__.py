"""Language diarization toolkit: segmentation, identification and scoring of code-switched audio."""

from .errors import ConfigError, DataError, LangDiarError, TranscriptionError
from .metrics import MetricReport, lder, ler, wer
from .timeline import LabeledAnnotation, Segment, Timeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "LabeledAnnotation",
    "LangDiarError",
    "MetricReport",
    "Segment",
    "Timeline",
    "TranscriptionError",
    "lder",
    "ler",
    "wer",
]
