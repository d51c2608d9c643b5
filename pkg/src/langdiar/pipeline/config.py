"""Pipeline configuration (JSON-serializable)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError

Topology = Literal["vad_seg_sli", "sd_seg_sli", "vad_frame_sli"]
TOPOLOGIES: tuple[str, ...] = ("vad_seg_sli", "sd_seg_sli", "vad_frame_sli")


class ClientConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["mock", "http"] = "mock"
    url: Optional[str] = None
    timeout: float = 30.0
    word_rate: float = 2.0

    @model_validator(mode="after")
    def _url_for_http(self) -> ClientConfig:
        if self.kind == "http" and not self.url:
            raise ValueError("http clients need a url")
        return self


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    topology: Topology = "sd_seg_sli"
    languages: list[str] = Field(default_factory=lambda: ["da", "sv", "en"])
    vad: Literal["oracle", "energy", "stitched"] = "stitched"
    diarizer: Literal["oracle", "reference"] = "reference"
    classifier: Literal["oracle", "reference"] = "reference"
    class_mask: Optional[list[str]] = None
    smoothing_window: int = 200
    min_segment: float = 1.0
    max_segment: float = 20.0
    chunk_len: float = 10.0
    slots: int = 3
    speech_activity_threshold: float = 0.5
    linkage_threshold: float = 0.05
    ahc_metric: Literal["cosine", "euclidean"] = "cosine"
    ahc_linkage: Literal["average", "complete", "single"] = "average"
    energy_threshold_db: float = -30.0
    hangover: int = 2
    seed: int = 0
    bootstrap_resamples: int = 1000
    model_path: Optional[str] = None
    train_files: int = 8
    train_seed: int = 12345
    clients: dict[str, ClientConfig] = Field(default_factory=lambda: {"*": ClientConfig()})
    missing_client: Literal["skip", "fail"] = "skip"
    merge_same_label: bool = False

    @model_validator(mode="after")
    def _check(self) -> PipelineConfig:
        if not self.languages:
            raise ValueError("languages must be non-empty")
        if len(set(self.languages)) != len(self.languages):
            raise ValueError("languages must be unique")
        if self.class_mask is not None:
            if not self.class_mask:
                raise ValueError("class_mask must not be empty")
            extra = set(self.class_mask) - set(self.languages)
            if extra:
                raise ValueError(f"class_mask languages {sorted(extra)} not in languages")
        if self.min_segment >= self.max_segment:
            raise ValueError("min_segment must be below max_segment")
        if self.topology == "vad_frame_sli" and self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")
        if self.chunk_len <= 0 or self.slots < 1:
            raise ValueError("chunk_len must be positive and slots >= 1")
        if not 0.0 <= self.speech_activity_threshold <= 1.0:
            raise ValueError("speech_activity_threshold must be a probability")
        if self.bootstrap_resamples < 100:
            raise ValueError("bootstrap_resamples must be >= 100")
        return self

    @property
    def mask(self) -> list[str]:
        return list(self.class_mask or self.languages)

    def needs_truth(self) -> bool:
        if self.classifier == "oracle":
            return True
        if self.topology == "sd_seg_sli":
            return self.diarizer == "oracle"
        return self.vad == "oracle" or (self.vad == "stitched" and self.diarizer == "oracle")

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:12]


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
