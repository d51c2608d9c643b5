import numpy as np
import pytest
from conftest import ann

from langdiar.audio import AudioBuffer, mel_band_centers
from langdiar.errors import ConfigError, ContractViolationError, MissingLanguageError
from langdiar.metrics import lder
from langdiar.pipeline.config import PipelineConfig
from langdiar.pipeline.systems import reference_model
from langdiar.sli import (
    ClassMask,
    OracleFrameClassifier,
    OracleSegmentClassifier,
    PosteriorTrack,
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
from langdiar.synthgen import Voicebank
from langdiar.timeline import Segment, Timeline, normalize, to_frames

SR = 16000
LANGS = ("da", "sv", "en")


def render(bank, lang, voice, seconds, seed):
    return bank.render(bank.voice(lang, voice), int(seconds * SR), np.random.default_rng(seed))


@pytest.fixture(scope="module")
def bank():
    return Voicebank(LANGS)


@pytest.fixture(scope="module")
def model():
    # Fit on the pipeline's seeded synthetic training set (many voices).
    return reference_model(PipelineConfig(languages=list(LANGS)))


def onehot(codes, L):
    m = np.zeros((len(codes), L))
    m[np.arange(len(codes)), codes] = 1
    return m


class TestTraining:
    def test_means_differ_in_language_bands(self, model, bank):
        bands = {lang: int(np.argmin(np.abs(mel_band_centers(8, SR) - bank.voice(lang, "x").language_band_hz))) for lang in LANGS}
        diff = model.means[0] - model.means[2]  # da minus en
        assert int(np.argmax(diff)) == bands["da"]
        assert int(np.argmin(diff)) == bands["en"]

    def test_deterministic_and_order_free(self, bank):
        data = [(AudioBuffer(render(bank, lang, f"d{k}", 3, k)), ann([(0, 3, lang)], LANGS)) for k, lang in enumerate(LANGS * 2)]
        a = train_reference_classifier(data, LANGS)
        b = train_reference_classifier(list(reversed(data)), LANGS)
        assert np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)

    def test_missing_language(self, bank):
        data = [(AudioBuffer(render(bank, "da", "v", 3, 0)), ann([(0, 3, "da")], LANGS))]
        with pytest.raises(MissingLanguageError):
            train_reference_classifier(data, LANGS)

    def test_single_language_dominates(self, bank):
        audio = AudioBuffer(render(bank, "sv", "solo", 4, 1))
        m = train_reference_classifier([(audio, ann([(0, 4, "sv")], ("sv",)))] + [
            (AudioBuffer(render(bank, lang, "o", 4, 2)), ann([(0, 4, lang)], LANGS)) for lang in ("da", "en")
        ], LANGS)
        post = ReferenceSegmentClassifier(m).classify(audio, Segment(0, 4))
        assert post[1] > 1 / 3


class TestSegmentClassifier:
    def test_oracle_pure_segment(self):
        clf = OracleSegmentClassifier(ann([(0, 10, "sv")], LANGS))
        assert classify_segment(AudioBuffer(np.zeros(10 * SR)), Segment(2, 7), clf).tolist() == [0, 1, 0]

    def test_reference_five_seconds(self, bank, model):
        for k, lang in enumerate(LANGS):
            audio = AudioBuffer(render(bank, lang, f"test-{k}", 5, 100 + k))
            post = classify_segment(audio, Segment(0, 5), ReferenceSegmentClassifier(model))
            assert LANGS[int(np.argmax(post))] == lang
            doubled = classify_segment(audio.scaled(2.0), Segment(0, 5), ReferenceSegmentClassifier(model))
            assert int(np.argmax(doubled)) == int(np.argmax(post))

    def test_too_short(self, model):
        with pytest.raises(ContractViolationError):
            classify_segment(AudioBuffer(np.zeros(SR)), Segment(0, 0.5), ReferenceSegmentClassifier(model))


class TestFramePosteriors:
    def test_oracle_matches_frames(self):
        ref = ann([(0.5, 1.2, "da"), (1.2, 2.0, "en")], LANGS)
        track = frame_posteriors(AudioBuffer(np.zeros(int(2.5 * SR))), OracleFrameClassifier(ref))
        codes = to_frames(ref, 100, 2.5, LANGS)
        speech = codes >= 0
        assert len(track) == 250
        assert np.array_equal(track.matrix[speech].argmax(axis=1), codes[speech])

    def test_silence_rows_normalized(self, model):
        track = frame_posteriors(AudioBuffer(np.zeros(SR)), ReferenceFrameClassifier(model))
        np.testing.assert_allclose(track.matrix.sum(axis=1), 1.0, atol=1e-9)

    def test_boundary_before_smoothing(self, bank, model):
        audio = AudioBuffer(np.concatenate([render(bank, "da", "p", 4, 7), render(bank, "en", "q", 4, 8)]))
        track = frame_posteriors(audio, ReferenceFrameClassifier(model))
        labels = frame_argmax(track.matrix)
        switches = np.flatnonzero(np.diff(labels)) + 1
        assert len(switches) == 1
        assert abs(switches[0] / 100 - 4.0) <= 0.2

    def test_frame_accuracy_on_pairs(self, bank, model):
        wrong = total = 0
        for k in range(10):
            a, b = LANGS[k % 3], LANGS[(k + 1) % 3]
            audio = AudioBuffer(np.concatenate([render(bank, a, f"p{k}", 4, k), render(bank, b, f"q{k}", 4, 50 + k)]))
            labels = frame_argmax(frame_posteriors(audio, ReferenceFrameClassifier(model)).matrix)
            truth = np.r_[np.full(400, LANGS.index(a)), np.full(400, LANGS.index(b))]
            wrong += np.count_nonzero(labels != truth)
            total += truth.size
        assert wrong / total < 0.02


class TestMask:
    def test_full_mask_identity(self):
        p = np.array([0.5, 0.3, 0.2])
        np.testing.assert_allclose(mask_posteriors(p, [0, 1, 2]), p)

    def test_renormalize(self):
        np.testing.assert_allclose(mask_posteriors(np.array([0.5, 0.3, 0.2]), [1, 2]), [0, 0.6, 0.4])

    def test_all_zero_fallback(self):
        np.testing.assert_allclose(mask_posteriors(np.array([1.0, 0, 0]), [1, 2]), [0, 0.5, 0.5])

    def test_by_language_id(self):
        out = mask_posteriors(np.array([0.2, 0.2, 0.6]), ClassMask(("da", "sv")), LANGS)
        np.testing.assert_allclose(out, [0.5, 0.5, 0])

    def test_empty(self):
        with pytest.raises(ConfigError):
            ClassMask(())
        with pytest.raises(ConfigError):
            mask_posteriors(np.array([1.0, 0.0]), [])

    def test_argmax_preserved_on_subset(self, rng):
        for _ in range(50):
            p = rng.dirichlet(np.ones(4))
            allowed = sorted(rng.choice(4, size=2, replace=False).tolist())
            out = mask_posteriors(p, allowed)
            assert np.count_nonzero(out[[i for i in range(4) if i not in allowed]]) == 0
            assert int(np.argmax(out)) == allowed[int(np.argmax(p[allowed]))]


class TestSmooth:
    def test_window_one_is_identity(self, rng):
        track = PosteriorTrack(rng.dirichlet(np.ones(3), size=50), LANGS)
        assert np.array_equal(smooth(track, 1).matrix, track.matrix)

    def test_constant_fixed_point(self):
        track = PosteriorTrack(np.tile([0.2, 0.5, 0.3], (300, 1)), LANGS)
        np.testing.assert_allclose(smooth(track, 200).matrix, track.matrix, atol=1e-12)

    def test_step_crossover(self):
        track = PosteriorTrack(onehot(np.r_[np.zeros(100, int), np.ones(100, int)], 2), ("a", "b"))
        out = smooth(track, 200)
        np.testing.assert_allclose(out.matrix[100], [0.5, 0.5], atol=0.01)
        first_b = int(np.flatnonzero(frame_argmax(out.matrix) == 1)[0])
        assert abs(first_b - 100) <= 1

    def test_rows_normalized_and_permutation_equivariant(self, rng):
        for _ in range(20):
            m = rng.dirichlet(np.ones(4), size=int(rng.integers(1, 400)))
            out = smooth(PosteriorTrack(m, ("a", "b", "c", "d")), 200).matrix
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
            perm = rng.permutation(4)
            permuted = smooth(PosteriorTrack(m[:, perm], ("a", "b", "c", "d")), 200).matrix
            np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)

    def test_truncated_edges_against_loop(self, rng):
        m = rng.dirichlet(np.ones(3), size=37)
        out = smooth(PosteriorTrack(m, LANGS), 10).matrix
        for i in range(37):
            window = m[max(0, i - 5) : min(37, i + 5)]
            np.testing.assert_allclose(out[i], window.mean(axis=0), atol=1e-12)


class TestDecode:
    def test_onehot_full_speech(self):
        codes = np.r_[np.zeros(120, int), np.full(80, 2)]
        track = PosteriorTrack(onehot(codes, 3), LANGS)
        out = decode_frames(track, normalize([(0, 2.0)]))
        assert out.tuples() == [(0, 1.2, "da"), (1.2, 2.0, "en")]

    def test_uniform_tie(self):
        track = PosteriorTrack(np.full((100, 3), 1 / 3), LANGS)
        assert decode_frames(track, normalize([(0.1, 0.9)])).tuples() == [(0.1, 0.9, "da")]

    def test_empty_speech(self):
        track = PosteriorTrack(np.full((10, 3), 1 / 3), LANGS)
        assert len(decode_frames(track, Timeline())) == 0

    def test_oracle_track_no_confusion(self):
        ref = ann([(0.0, 3.3, "sv"), (3.3, 5.0, "da"), (6.0, 7.25, "en")], LANGS)
        audio = AudioBuffer(np.zeros(8 * SR))
        speech = ref.support()
        hyp = decode_frames(frame_posteriors(audio, OracleFrameClassifier(ref)), speech)
        rep = lder(ref, hyp, 8.0)
        assert rep.lc == 0 and rep.lder == 0

    def test_over_segmentation_counter(self, rng):
        m = np.clip(np.full((200, 2), 0.5) + rng.normal(0, 0.01, size=(200, 1)) * [1, -1], 0, 1)
        stats = over_segmentation_stats(PosteriorTrack(m, ("a", "b")), normalize([(0, 2)]))
        assert stats["switches"] > 10 and stats["close_frames"] == 200
