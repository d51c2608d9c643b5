"""Audio buffers, PCM16 WAV I/O and log-mel features."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataError

SUPPORTED_RATES = (8000, 16000)
FRAME_RATE = 100
WINDOW_SECONDS = 0.025
LOG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError("audio must be mono")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def span(self, start: float, end: float) -> AudioBuffer:
        lo = max(0, int(round(start * self.sample_rate)))
        hi = min(len(self.samples), int(round(end * self.sample_rate)))
        return AudioBuffer(self.samples[lo:hi], self.sample_rate)

    def scaled(self, gain: float) -> AudioBuffer:
        return AudioBuffer(self.samples * gain, self.sample_rate)


def read_wav(path: str | Path) -> AudioBuffer:
    try:
        fh = wave.open(str(path), "rb")
    except (OSError, EOFError, wave.Error) as exc:
        raise DataError(f"{path}: cannot read WAV: {exc}") from None
    with fh:
        channels, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
        if channels != 1 or width != 2:
            raise DataError(f"{path}: expected PCM16 mono, got {channels} channel(s) of {8 * width} bit")
        if rate not in SUPPORTED_RATES:
            raise DataError(f"{path}: sample rate {rate} not supported (use 8000 or 16000)")
        raw = fh.readframes(n)
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(pcm, rate)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    if audio.sample_rate not in SUPPORTED_RATES:
        raise DataError(f"sample rate {audio.sample_rate} not supported")
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(audio.sample_rate)
        fh.writeframes(pcm.tobytes())


def n_frames(duration: float, frame_rate: float = FRAME_RATE) -> int:
    return int(math.ceil(duration * frame_rate - 1e-9))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1), spanning 0..Nyquist."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    bank = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    bank.setflags(write=False)
    return bank


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    return _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mels + 2))[1:-1]


def frame_power_spectra(audio: AudioBuffer, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """Hann-windowed power spectra, one row per frame.

    Frame i is centered at (i + 0.5) / frame_rate; the signal is zero-padded
    at both ends.
    """
    sr = audio.sample_rate
    win = int(round(WINDOW_SECONDS * sr))
    n_fft = 1 << (win - 1).bit_length()
    T = n_frames(audio.duration, frame_rate)
    if T == 0:
        return np.zeros((0, n_fft // 2 + 1))
    hop = sr / frame_rate
    starts = np.round((np.arange(T) + 0.5) * hop - win / 2).astype(np.int64)
    pad = win + int(hop) + 1
    x = np.concatenate([np.zeros(pad), audio.samples, np.zeros(pad)])
    idx = starts[:, None] + pad + np.arange(win)[None, :]
    frames = x[idx] * np.hanning(win)[None, :]
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return spec.real**2 + spec.imag**2


def log_mel(audio: AudioBuffer, n_mels: int = 8, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """Natural-log mel band energies, shape (T, n_mels) with T = ceil(duration * frame_rate)."""
    power = frame_power_spectra(audio, frame_rate)
    bank = mel_filterbank(n_mels, 2 * (power.shape[1] - 1), audio.sample_rate)
    return np.log(power @ bank.T + LOG_FLOOR)
