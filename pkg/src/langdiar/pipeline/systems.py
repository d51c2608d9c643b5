"""The three cascaded language identification systems."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..audio import AudioBuffer
from ..diarizer import (
    OracleLocalDiarizer,
    ReferenceLocalDiarizer,
    chunk_audio,
    diarize,
    local_diarize,
    speaker_change_segments,
)
from ..errors import ConfigError, LangDiarError
from ..segmenters import VadConfig, energy_vad, postprocess_segments, stitch_local_vad
from ..sli import (
    ClassMask,
    LanguageModelRef,
    OracleFrameClassifier,
    OracleSegmentClassifier,
    ReferenceFrameClassifier,
    ReferenceSegmentClassifier,
    classify_segment,
    decode_frames,
    frame_argmax,
    frame_posteriors,
    mask_posteriors,
    over_segmentation_stats,
    smooth,
    train_reference_classifier,
)
from ..synthgen import (
    MixSpec,
    Voicebank,
    make_mix_spec_playlists,
    render_synthetic_audio,
)
from ..timeline import LabeledAnnotation, Timeline
from .config import PipelineConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FileInput:
    file_id: str
    audio: AudioBuffer
    ref_lang: LabeledAnnotation | None = None
    ref_speaker: LabeledAnnotation | None = None

    @property
    def duration(self) -> float:
        return self.audio.duration


@dataclass
class SystemOutput:
    hypothesis: LabeledAnnotation
    stats: dict = field(default_factory=dict)


class FileError(LangDiarError):
    """A component failed on a particular file."""

    def __init__(self, file_id: str, cause: Exception):
        super().__init__(f"{file_id}: {cause}")
        self.file_id = file_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)


def save_model(model: LanguageModelRef, path: str | Path) -> None:
    payload = {
        "languages": list(model.languages),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "n_mels": model.n_mels,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_model(path: str | Path) -> LanguageModelRef:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None
    return LanguageModelRef(tuple(data["languages"]), np.array(data["means"]), np.array(data["variances"]), data["n_mels"])


@lru_cache(maxsize=8)
def _synthetic_model(languages: tuple[str, ...], n_files: int, seed: int) -> LanguageModelRef:
    spec = MixSpec(mode="short", gap="1s", n_files=n_files, languages=languages, seed=seed)
    bank = Voicebank(languages)
    data = []
    for playlist in make_mix_spec_playlists(spec):
        audio, ref_lang, _ = render_synthetic_audio(playlist, bank)
        data.append((audio, ref_lang))
    return train_reference_classifier(data, languages)


def reference_model(cfg: PipelineConfig) -> LanguageModelRef:
    """The configured model file, or one fit on a seeded synthetic training set."""
    if cfg.model_path:
        model = load_model(cfg.model_path)
        missing = set(cfg.languages) - set(model.languages)
        if missing:
            raise ConfigError(f"model lacks languages {sorted(missing)}")
        return model
    return _synthetic_model(tuple(cfg.languages), cfg.train_files, cfg.train_seed)


class System:
    """One configured cascade. Immutable after construction; :meth:`run` is
    safe to call for different files concurrently."""

    def __init__(self, cfg: PipelineConfig, model: LanguageModelRef | None = None):
        self.cfg = cfg
        uses_model = cfg.classifier == "reference"
        self.model = (model or reference_model(cfg)) if uses_model else None
        self.vad_cfg = VadConfig(
            energy_threshold_db=cfg.energy_threshold_db,
            speech_activity_threshold=cfg.speech_activity_threshold,
            hangover=cfg.hangover,
        )
        self.languages = tuple(cfg.languages)
        self.mask = ClassMask(tuple(cfg.mask))

    def _truth(self, f: FileInput, which: str) -> LabeledAnnotation:
        ann = f.ref_lang if which == "lang" else f.ref_speaker
        if ann is None:
            raise ConfigError(f"{f.file_id}: oracle components need a {which} reference")
        return ann

    def local_diarizer(self, f: FileInput):
        if self.cfg.diarizer == "oracle":
            return OracleLocalDiarizer(self._truth(f, "speaker"), self.cfg.slots)
        return ReferenceLocalDiarizer(self.cfg.slots, vad=self.vad_cfg)

    def speech(self, f: FileInput) -> Timeline:
        if self.cfg.vad == "oracle":
            ref = f.ref_lang if f.ref_lang is not None else f.ref_speaker
            if ref is None:
                raise ConfigError(f"{f.file_id}: oracle VAD needs a reference")
            return ref.support()
        if self.cfg.vad == "energy":
            return energy_vad(f.audio, self.vad_cfg)
        diarizer = self.local_diarizer(f)
        chunks = chunk_audio(f.audio, self.cfg.chunk_len)
        results = [local_diarize(c, diarizer, self.cfg.speech_activity_threshold) for c in chunks]
        return stitch_local_vad(
            [r.slot_activity for r in results],
            self.cfg.speech_activity_threshold,
            spans=[r.span for r in results],
        )

    def segment_classifier(self, f: FileInput):
        if self.cfg.classifier == "oracle":
            return OracleSegmentClassifier(self._truth(f, "lang"), self.languages)
        return ReferenceSegmentClassifier(self.model)

    def frame_classifier(self, f: FileInput):
        if self.cfg.classifier == "oracle":
            return OracleFrameClassifier(self._truth(f, "lang"), self.languages)
        return ReferenceFrameClassifier(self.model)

    def label_segments(self, f: FileInput, segments: Timeline) -> LabeledAnnotation:
        segments = postprocess_segments(segments, self.cfg.min_segment, self.cfg.max_segment)
        clf = self.segment_classifier(f)
        entries = []
        for seg in segments:
            post = classify_segment(f.audio, seg, clf, min_len=self.cfg.min_segment, max_len=self.cfg.max_segment)
            post = mask_posteriors(post, self.mask, clf.languages)
            entries.append((seg, clf.languages[int(frame_argmax(post[None, :])[0])]))
        return LabeledAnnotation(tuple(entries), self.languages, f.file_id, "language")

    def run_vad_seg_sli(self, f: FileInput) -> SystemOutput:
        speech = self.speech(f)
        hyp = self.label_segments(f, speech)
        return SystemOutput(hyp, {"vad_segments": len(speech), "segments": len(hyp)})

    def speakers(self, f: FileInput) -> LabeledAnnotation:
        return diarize(
            f.audio,
            self.local_diarizer(f),
            chunk_len=self.cfg.chunk_len,
            speech_threshold=self.cfg.speech_activity_threshold,
            linkage_threshold=self.cfg.linkage_threshold,
            metric=self.cfg.ahc_metric,
            linkage=self.cfg.ahc_linkage,
            file_id=f.file_id,
        )

    def run_sd_seg_sli(self, f: FileInput) -> SystemOutput:
        speakers = self.speakers(f)
        turns = speaker_change_segments(speakers)
        hyp = self.label_segments(f, turns)
        return SystemOutput(hyp, {"speakers": len(speakers.label_space), "turns": len(turns), "segments": len(hyp)})

    def run_vad_frame_sli(self, f: FileInput) -> SystemOutput:
        speech = self.speech(f)
        track = frame_posteriors(f.audio, self.frame_classifier(f))
        track = smooth(mask_posteriors(track, self.mask), self.cfg.smoothing_window)
        hyp = decode_frames(track, speech, f.file_id)
        stats = over_segmentation_stats(track, speech)
        if stats["switches"]:
            log.info("%s: %d language switches inside speech, %d near-tie frames", f.file_id, stats["switches"], stats["close_frames"])
        return SystemOutput(hyp, {"vad_segments": len(speech), "segments": len(hyp), **stats})

    def run(self, f: FileInput) -> SystemOutput:
        try:
            return getattr(self, f"run_{self.cfg.topology}")(f)
        except FileError:
            raise
        except LangDiarError as exc:
            raise FileError(f.file_id, exc) from exc


def run_vad_seg_sli(f: FileInput, cfg: PipelineConfig, model: LanguageModelRef | None = None) -> LabeledAnnotation:
    return System(cfg.model_copy(update={"topology": "vad_seg_sli"}), model).run(f).hypothesis


def run_sd_seg_sli(f: FileInput, cfg: PipelineConfig, model: LanguageModelRef | None = None) -> LabeledAnnotation:
    return System(cfg.model_copy(update={"topology": "sd_seg_sli"}), model).run(f).hypothesis


def run_vad_frame_sli(f: FileInput, cfg: PipelineConfig, model: LanguageModelRef | None = None) -> LabeledAnnotation:
    return System(cfg.model_copy(update={"topology": "vad_frame_sli"}), model).run(f).hypothesis

