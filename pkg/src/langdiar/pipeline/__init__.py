"""Cascaded language identification systems, transcription routing and batch runs."""

from .config import ClientConfig, PipelineConfig, load_config
from .evaluate import Evaluation, FileScore, evaluate
from .runner import FileSource, RunResult, load_manifest, run_benchmark
from .systems import (
    FileInput,
    System,
    run_sd_seg_sli,
    run_vad_frame_sli,
    run_vad_seg_sli,
)
from .transcribe import HttpClient, MockClient, route_and_transcribe

__all__ = [
    "ClientConfig",
    "Evaluation",
    "FileInput",
    "FileScore",
    "FileSource",
    "HttpClient",
    "MockClient",
    "PipelineConfig",
    "RunResult",
    "System",
    "evaluate",
    "load_config",
    "load_manifest",
    "route_and_transcribe",
    "run_benchmark",
    "run_sd_seg_sli",
    "run_vad_frame_sli",
    "run_vad_seg_sli",
]
