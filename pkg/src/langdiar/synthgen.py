"""Synthetic multilingual test material.

Files are concatenations of monolingual segments whose languages are drawn
uniformly and whose durations are drawn uniformly within the mode bounds
(5-15 s for ``short``, 15-45 s for ``long``), optionally separated by one
second of digital silence. Audio comes either from a parametric voicebank
(band-limited noise with a per-language spectral band, a per-voice
secondary band and syllabic amplitude modulation) or from excerpts of a
monolingual corpus.
"""

from __future__ import annotations

import json
import math
import zlib
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .audio import FRAME_RATE, AudioBuffer, mel_band_centers, n_frames, write_wav
from .errors import ConfigError, DataError, InsufficientSourceError
from .timeline import LabeledAnnotation, to_frames

MODE_BOUNDS = {"short": (5.0, 15.0), "long": (15.0, 45.0)}
GAP_SECONDS = {"none": 0.0, "1s": 1.0}
DEFAULT_LANGUAGES = ("da", "sv", "en")


@dataclass(frozen=True)
class MixSpec:
    mode: str = "short"
    gap: str = "1s"
    n_files: int = 60
    target_file_len: float = 60.0
    languages: tuple[str, ...] = DEFAULT_LANGUAGES
    seed: int = 0
    sample_rate: int = 16000
    reuse_voice: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODE_BOUNDS:
            raise ConfigError(f"mode must be one of {sorted(MODE_BOUNDS)}, got {self.mode!r}")
        if self.gap not in GAP_SECONDS:
            raise ConfigError(f"gap must be one of {sorted(GAP_SECONDS)}, got {self.gap!r}")
        if not self.languages:
            raise ConfigError("languages must be non-empty")
        if self.n_files < 0 or self.target_file_len <= 0:
            raise ConfigError("n_files must be >= 0 and target_file_len > 0")
        object.__setattr__(self, "languages", tuple(self.languages))

    @property
    def bounds(self) -> tuple[float, float]:
        return MODE_BOUNDS[self.mode]

    @property
    def gap_seconds(self) -> float:
        return GAP_SECONDS[self.gap]

    @property
    def name(self) -> str:
        return f"ts-mix-{self.mode}-{'gap' if self.gap == '1s' else 'nogap'}"


@dataclass(frozen=True)
class MixEntry:
    language: str
    voice: str
    n_samples: int
    source: int | None = None
    offset: int | None = None


@dataclass(frozen=True)
class MixPlaylist:
    file_id: str
    entries: tuple[MixEntry, ...]
    languages: tuple[str, ...]
    sample_rate: int = 16000
    gap_samples: int = 0
    seed: int = 0
    index: int = 0

    def entry_spans(self) -> list[tuple[int, int]]:
        """Sample-exact (start, end) of every entry."""
        spans, cur = [], 0
        for k, entry in enumerate(self.entries):
            if k:
                cur += self.gap_samples
            spans.append((cur, cur + entry.n_samples))
            cur += entry.n_samples
        return spans

    @property
    def n_samples(self) -> int:
        spans = self.entry_spans()
        return spans[-1][1] if spans else 0

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def durations(self) -> list[float]:
        return [e.n_samples / self.sample_rate for e in self.entries]

    def language_annotation(self) -> LabeledAnnotation:
        """Reference language timeline; abutting same-language entries merge."""
        sr = self.sample_rate
        merged: list[list] = []
        for (lo, hi), entry in zip(self.entry_spans(), self.entries):
            if merged and merged[-1][2] == entry.language and merged[-1][1] == lo:
                merged[-1][1] = hi
            else:
                merged.append([lo, hi, entry.language])
        return LabeledAnnotation.from_tuples(
            ((lo / sr, hi / sr, lab) for lo, hi, lab in merged),
            label_space=self.languages,
            file_id=self.file_id,
        )

    def speaker_annotation(self) -> LabeledAnnotation:
        sr = self.sample_rate
        voices = tuple(sorted({e.voice for e in self.entries}))
        return LabeledAnnotation.from_tuples(
            ((lo / sr, hi / sr, e.voice) for (lo, hi), e in zip(self.entry_spans(), self.entries)),
            label_space=voices,
            file_id=self.file_id,
            kind="speaker",
        )

    def to_dict(self) -> dict:
        return {
            "file_id": self.file_id,
            "sample_rate": self.sample_rate,
            "gap_samples": self.gap_samples,
            "seed": self.seed,
            "index": self.index,
            "languages": list(self.languages),
            "entries": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> MixPlaylist:
        return cls(
            file_id=data["file_id"],
            entries=tuple(MixEntry(**e) for e in data["entries"]),
            languages=tuple(data["languages"]),
            sample_rate=data["sample_rate"],
            gap_samples=data["gap_samples"],
            seed=data["seed"],
            index=data["index"],
        )


def make_mix_spec_playlists(spec: MixSpec) -> list[MixPlaylist]:
    """Draw one playlist per file.

    Each file's RNG depends only on (seed, file index), so the gap and
    no-gap variants of a MixSpec share language and duration draws.
    """
    lo, hi = spec.bounds
    sr = spec.sample_rate
    playlists = []
    for index in range(spec.n_files):
        rng = np.random.default_rng([spec.seed, index])
        entries: list[MixEntry] = []
        speech = 0
        while speech < spec.target_file_len * sr:
            lang = spec.languages[int(rng.integers(len(spec.languages)))]
            n = int(math.floor(rng.uniform(lo, hi) * sr))
            voice_k = 0 if spec.reuse_voice else len(entries)
            entries.append(MixEntry(lang, f"s{spec.seed}-f{index:03d}-v{voice_k}", n))
            speech += n
        playlists.append(
            MixPlaylist(
                file_id=f"{spec.name}-{index:03d}",
                entries=tuple(entries),
                languages=spec.languages,
                sample_rate=sr,
                gap_samples=int(round(spec.gap_seconds * sr)),
                seed=spec.seed,
                index=index,
            )
        )
    return playlists


@dataclass(frozen=True)
class VoiceParams:
    language_band_hz: float
    voice_band_hz: float
    voice_band_db: float
    level_db: float
    am_rate: float
    am_phase: float


def _stable_seed(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


@dataclass(frozen=True)
class Voicebank:
    """Parametric voices on an 8-band mel layout.

    Languages occupy the odd mel bands (1, 3, 5, 7), voices a secondary
    band among the even ones, so language and speaker cues are separable.
    """

    languages: tuple[str, ...] = DEFAULT_LANGUAGES
    sample_rate: int = 16000
    am_depth: float = 0.6
    floor_db: float = -45.0
    band_width: float = 0.08
    _centers: tuple[float, ...] = field(init=False, default=())

    def __post_init__(self) -> None:
        if len(self.languages) > 4:
            raise ConfigError("the parametric voicebank supports at most 4 languages")
        object.__setattr__(self, "languages", tuple(self.languages))
        object.__setattr__(self, "_centers", tuple(mel_band_centers(8, self.sample_rate)))

    def voice(self, language: str, voice_id: str) -> VoiceParams:
        if language not in self.languages:
            raise DataError(f"unknown language {language!r} for voicebank {list(self.languages)}")
        if not voice_id:
            raise DataError("empty voice id")
        rng = np.random.default_rng(_stable_seed(voice_id))
        band = (0, 2, 4, 6)[int(rng.integers(4))]
        return VoiceParams(
            language_band_hz=self._centers[1 + 2 * self.languages.index(language)],
            voice_band_hz=self._centers[band] * rng.uniform(0.9, 1.1),
            voice_band_db=rng.uniform(-12.0, -6.0),
            level_db=rng.uniform(-22.0, -16.0),
            am_rate=rng.uniform(3.0, 6.0),
            am_phase=rng.uniform(0.0, 2 * np.pi),
        )

    def envelope(self, params: VoiceParams, n_fft: int) -> np.ndarray:
        freqs = np.fft.rfftfreq(n_fft, 1.0 / self.sample_rate)
        env = np.full(len(freqs), 10 ** (self.floor_db / 20))
        for fc, gain_db in ((params.language_band_hz, 0.0), (params.voice_band_hz, params.voice_band_db)):
            width = self.band_width * fc
            env += 10 ** (gain_db / 20) * np.exp(-0.5 * ((freqs - fc) / width) ** 2)
        return env

    def render(self, params: VoiceParams, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        if n_samples == 0:
            return np.zeros(0)
        n_fft = next_fast_len(n_samples, real=True)
        noise = rng.standard_normal(n_fft)
        shaped = irfft(rfft(noise) * self.envelope(params, n_fft), n=n_fft)[:n_samples]
        t = np.arange(n_samples) / self.sample_rate
        am = 1.0 - self.am_depth * 0.5 * (1.0 + np.sin(2 * np.pi * params.am_rate * t + params.am_phase))
        shaped *= am
        rms = np.sqrt(np.mean(shaped**2)) or 1.0
        return np.clip(shaped * (10 ** (params.level_db / 20) / rms), -1.0, 1.0)


def render_synthetic_audio(
    playlist: MixPlaylist, voicebank: Voicebank
) -> tuple[AudioBuffer, LabeledAnnotation, LabeledAnnotation]:
    """Waveform plus exact language and speaker references."""
    if voicebank.sample_rate != playlist.sample_rate:
        raise DataError("voicebank and playlist sample rates differ")
    out = np.zeros(playlist.n_samples)
    for k, ((lo, hi), entry) in enumerate(zip(playlist.entry_spans(), playlist.entries)):
        params = voicebank.voice(entry.language, entry.voice)
        rng = np.random.default_rng([playlist.seed, playlist.index, k])
        out[lo:hi] = voicebank.render(params, hi - lo, rng)
    return (
        AudioBuffer(out, playlist.sample_rate),
        playlist.language_annotation(),
        playlist.speaker_annotation(),
    )


def concat_from_corpus(
    corpus: Sequence[tuple[AudioBuffer, str]], playlist: MixPlaylist
) -> tuple[AudioBuffer, LabeledAnnotation, MixPlaylist]:
    """Cut one random excerpt per playlist entry from a same-language corpus file.

    Returns the audio, the language reference, and the playlist with each
    entry's source file index and sample offset filled in.
    """
    rng = np.random.default_rng([playlist.seed, playlist.index, 7919])
    by_lang: dict[str, list[int]] = {}
    for i, (audio, lang) in enumerate(corpus):
        if audio.sample_rate != playlist.sample_rate:
            raise DataError(f"corpus file {i} has sample rate {audio.sample_rate}")
        by_lang.setdefault(lang, []).append(i)
    resolved = []
    for entry in playlist.entries:
        candidates = [i for i in by_lang.get(entry.language, []) if len(corpus[i][0]) >= entry.n_samples]
        if not candidates:
            raise InsufficientSourceError(
                f"no corpus file for language {entry.language!r} holds "
                f"{entry.n_samples / playlist.sample_rate:.2f}s"
            )
        src = candidates[int(rng.integers(len(candidates)))]
        offset = int(rng.integers(len(corpus[src][0]) - entry.n_samples + 1))
        resolved.append(MixEntry(entry.language, entry.voice, entry.n_samples, src, offset))
    filled = MixPlaylist(
        playlist.file_id,
        tuple(resolved),
        playlist.languages,
        playlist.sample_rate,
        playlist.gap_samples,
        playlist.seed,
        playlist.index,
    )
    out = np.zeros(filled.n_samples)
    for (lo, hi), entry in zip(filled.entry_spans(), filled.entries):
        out[lo:hi] = corpus[entry.source][0].samples[entry.offset : entry.offset + entry.n_samples]
    return AudioBuffer(out, filled.sample_rate), filled.language_annotation(), filled


def training_mix_stream(
    samples: Sequence[tuple[AudioBuffer, str]],
    max_len: float = 10.0,
    seed: int = 0,
    n_range: tuple[int, int] = (2, 4),
    languages: Sequence[str] | None = None,
) -> Iterator[tuple[AudioBuffer, np.ndarray]]:
    """Endless stream of on-the-fly multilingual concatenations.

    Every mix joins between ``n_range[0]`` and ``n_range[1]`` monolingual
    pieces shorter than ``max_len`` seconds (longer samples are cropped to a
    random excerpt). Labels are language codes at 100 frames per second.
    """
    if not samples:
        return
    langs = list(languages) if languages is not None else sorted({lang for _, lang in samples})
    sr = samples[0][0].sample_rate
    limit = int(math.ceil(max_len * sr)) - 1
    rng = np.random.default_rng(seed)
    while True:
        k = int(rng.integers(n_range[0], n_range[1] + 1))
        pieces, items, cur = [], [], 0
        for _ in range(k):
            audio, lang = samples[int(rng.integers(len(samples)))]
            x = audio.samples
            if len(x) > limit:
                n = int(rng.integers(min(sr, limit), limit + 1))
                off = int(rng.integers(len(x) - n + 1))
                x = x[off : off + n]
            if len(x) == 0:
                continue
            pieces.append(x)
            items.append((cur / sr, (cur + len(x)) / sr, lang))
            cur += len(x)
        audio = AudioBuffer(np.concatenate(pieces) if pieces else np.zeros(0), sr)
        ann = LabeledAnnotation.from_tuples(items, label_space=langs)
        yield audio, to_frames(ann, FRAME_RATE, audio.duration)


def write_mix_set(spec: MixSpec, out_dir: str | Path, voicebank: Voicebank | None = None) -> Path:
    """Render a whole set: ``wav/``, ``rttm/`` and ``manifest.json`` under ``out_dir/<set name>``."""
    from .rttm import write_rttm

    voicebank = voicebank or Voicebank(spec.languages, spec.sample_rate)
    root = Path(out_dir) / spec.name
    (root / "wav").mkdir(parents=True, exist_ok=True)
    (root / "rttm").mkdir(parents=True, exist_ok=True)
    files = []
    for playlist in make_mix_spec_playlists(spec):
        audio, ref_lang, ref_spk = render_synthetic_audio(playlist, voicebank)
        wav = root / "wav" / f"{playlist.file_id}.wav"
        rttm = root / "rttm" / f"{playlist.file_id}.rttm"
        write_wav(wav, audio)
        write_rttm(rttm, [ref_lang, ref_spk])
        files.append(
            {
                "file_id": playlist.file_id,
                "wav": str(wav.relative_to(root)),
                "rttm": str(rttm.relative_to(root)),
                "duration": audio.duration,
                "n_frames": n_frames(audio.duration),
                "playlist": playlist.to_dict(),
            }
        )
    manifest = {"spec": {**asdict(spec), "languages": list(spec.languages)}, "files": files}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root
