import wave

import numpy as np
import pytest
from conftest import ann

from langdiar.audio import (
    AudioBuffer,
    log_mel,
    mel_band_centers,
    mel_filterbank,
    n_frames,
    read_wav,
    write_wav,
)
from langdiar.errors import DataError
from langdiar.rttm import format_rttm, parse_rttm, timeline_annotation
from langdiar.timeline import normalize


def test_rttm_line_format():
    text = format_rttm([ann([(1.5, 3.25, "da")], file_id="f1"), ann([(0, 2, "s1")], file_id="f1", kind="speaker")])
    assert text.splitlines() == [
        "LANGUAGE f1 1 1.500 1.750 <NA> <NA> da <NA> <NA>",
        "SPEAKER f1 1 0.000 2.000 <NA> <NA> s1 <NA> <NA>",
    ]


def test_rttm_round_trip_and_foreign_lines():
    original = ann([(0.25, 1.0, "sv"), (1.0, 4.5, "en")], ("da", "sv", "en"), file_id="x")
    text = "SPKR-INFO x 1 <NA> <NA> <NA> unknown s1 <NA> <NA>\n" + format_rttm([original])
    parsed = parse_rttm(text, label_space=("da", "sv", "en"))
    assert list(parsed) == ["language"]
    assert parsed["language"]["x"].tuples() == original.tuples()


def test_rttm_bad_line():
    with pytest.raises(DataError):
        parse_rttm("SPEAKER f 1 abc 1.0 <NA> <NA> s <NA> <NA>")


def test_vad_as_speaker_rttm():
    text = format_rttm([timeline_annotation(normalize([(0, 1)]), "v")])
    assert text == "SPEAKER v 1 0.000 1.000 <NA> <NA> speech <NA> <NA>\n"


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 1600)
    write_wav(tmp_path / "a.wav", AudioBuffer(x, 8000))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    np.testing.assert_allclose(back.samples, x, atol=1 / 32768)


@pytest.mark.parametrize("channels,rate", [(2, 16000), (1, 44100)])
def test_wav_rejects_unsupported(tmp_path, channels, rate):
    path = tmp_path / "bad.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(b"\x00\x00" * channels * 10)
    with pytest.raises(DataError):
        read_wav(path)


def test_filterbank_shape_and_coverage():
    bank = mel_filterbank(8, 512, 16000)
    assert bank.shape == (8, 257)
    assert (bank >= 0).all() and (bank.max(axis=1) > 0).all()
    centers = mel_band_centers(8, 16000)
    assert np.all(np.diff(centers) > 0) and centers[-1] < 8000


def test_log_mel_frames_and_tone_band():
    sr = 16000
    t = np.arange(sr) / sr
    centers = mel_band_centers(8, sr)
    audio = AudioBuffer(0.5 * np.sin(2 * np.pi * centers[3] * t), sr)
    feats = log_mel(audio)
    assert feats.shape == (n_frames(1.0), 8)
    assert int(np.argmax(feats[50])) == 3
