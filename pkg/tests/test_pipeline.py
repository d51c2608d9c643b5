import json

import httpx
import numpy as np
import pytest
from conftest import ann, synth_files

from langdiar.audio import AudioBuffer
from langdiar.cli import main
from langdiar.errors import ConfigError, TranscriptionError
from langdiar.metrics import frame_metric, lder, ler
from langdiar.pipeline.config import TOPOLOGIES, PipelineConfig, load_config
from langdiar.pipeline.evaluate import evaluate, pooled_frames
from langdiar.pipeline.runner import load_manifest, run_benchmark
from langdiar.pipeline.systems import FileInput, System
from langdiar.pipeline.transcribe import (
    HttpClient,
    MockClient,
    merge_same_label,
    route_and_transcribe,
)
from langdiar.synthgen import (
    MixEntry,
    MixPlaylist,
    MixSpec,
    Voicebank,
    render_synthetic_audio,
    write_mix_set,
)
from langdiar.timeline import Segment

SR = 16000
LANGS = ("da", "sv", "en")
ORACLE = dict(vad="oracle", diarizer="oracle", classifier="oracle")


def two_language_file(first=8.0, second=4.0, langs=("da", "en"), file_id="pair"):
    entries = (MixEntry(langs[0], "va", int(first * SR)), MixEntry(langs[1], "vb", int(second * SR)))
    p = MixPlaylist(file_id, entries, LANGS, SR, 0)
    audio, lang, spk = render_synthetic_audio(p, Voicebank(LANGS))
    return FileInput(file_id, audio, lang, spk)


class TestConfig:
    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"topologyy": "sd_seg_sli"}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_mask_outside_languages(self):
        with pytest.raises(ConfigError):
            load_config(class_mask=["fi"])

    def test_hash_stable_and_sensitive(self):
        a, b = PipelineConfig(), PipelineConfig()
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != PipelineConfig(seed=1).config_hash()

    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(topology="vad_frame_sli", class_mask=["da", "en"])
        path = tmp_path / "c.json"
        path.write_text(cfg.canonical_json())
        assert load_config(path) == cfg


class TestTranscription:
    audio = AudioBuffer(np.zeros(10 * SR))

    def test_mock_grid(self):
        assert MockClient().transcribe(self.audio, Segment(0, 1), "da") == ["da:0", "da:1"]
        assert MockClient().transcribe(self.audio, Segment(1.0, 2.2), "sv") == ["sv:2", "sv:3"]

    def test_skip_policy(self):
        hyp = ann([(0, 2, "da"), (2, 4, "sv")], LANGS)
        out = route_and_transcribe(hyp, self.audio, {"da": MockClient()})
        assert out.tokens == ["da:0", "da:1", "da:2", "da:3"] and len(out.warnings) == 1

    def test_fail_policy(self):
        hyp = ann([(0, 2, "sv")], LANGS)
        with pytest.raises(TranscriptionError):
            route_and_transcribe(hyp, self.audio, {"da": MockClient()}, missing="fail")

    def test_http_client(self):
        seen = []

        def handler(request):
            body = json.loads(request.content)
            seen.append(body)
            if body["language"] == "sv":
                return httpx.Response(503)
            return httpx.Response(200, json={"tokens": ["hej", body["language"]]})

        client = HttpClient("http://asr.invalid/t", transport=httpx.MockTransport(handler))
        hyp = ann([(0, 1, "da"), (1, 2, "sv"), (2, 3, "en")], LANGS)
        out = route_and_transcribe(hyp, self.audio, {"*": client})
        assert out.tokens == ["hej", "da", "hej", "en"]
        assert [s.error is not None for s in out.segments] == [False, True, False]
        assert seen[0]["sample_rate"] == SR and len(seen[0]["pcm16"]) > 0

    def test_merge_same_label(self):
        hyp = ann([(0, 2, "da"), (2, 3, "da"), (3, 5, "en"), (6, 7, "en")], LANGS)
        assert merge_same_label(hyp).tuples() == [(0, 3, "da"), (3, 5, "en"), (6, 7, "en")]


class TestEvaluate:
    def pair(self, fid, wrong):
        ref = ann([(0, 10, "da")], LANGS, file_id=fid)
        hyp = ann([(0, 10 - wrong, "da"), (10 - wrong, 10, "sv")], LANGS, file_id=fid)
        return ref, hyp

    def test_duration_weighted_aggregate(self):
        (ra, ha), (rb, hb) = self.pair("a", 1.0), self.pair("b", 3.0)
        ev = evaluate("m", {"a": ha, "b": hb}, {"a": ra, "b": rb}, {"a": 10.0, "b": 10.0})
        assert ev.aggregate.lder == pytest.approx(0.2)
        assert ev.aggregate.ler == pytest.approx(0.2)
        assert ev.aggregate.ci_low <= 0.2 <= ev.aggregate.ci_high
        r, h = pooled_frames([ra, rb], [ha, hb], [10.0, 10.0], LANGS)
        assert frame_metric(r, h, "lder") == pytest.approx(0.2)

    def test_perfect(self):
        ref, _ = self.pair("a", 1.0)
        ev = evaluate("m", {"a": ref}, {"a": ref}, {"a": 10.0})
        assert ev.aggregate.lder == 0 and (ev.aggregate.ci_low, ev.aggregate.ci_high) == (0.0, 0.0)

    def test_missing_reference_excluded(self, caplog):
        ref, hyp = self.pair("a", 1.0)
        ev = evaluate("m", {"a": hyp, "z": hyp}, {"a": ref}, {"a": 10.0, "z": 10.0})
        assert ev.excluded == ["z"] and [f.file_id for f in ev.files] == ["a"]
        assert "z" in caplog.text


@pytest.fixture(scope="module")
def gap_files():
    return synth_files(MixSpec("short", "1s", n_files=3, target_file_len=40, seed=21))


@pytest.fixture(scope="module")
def nogap_files():
    return synth_files(MixSpec("short", "none", n_files=3, target_file_len=40, seed=21))


class TestTopologies:
    @pytest.mark.parametrize("topology", TOPOLOGIES)
    def test_all_oracle_is_perfect_with_gaps(self, topology, gap_files):
        system = System(PipelineConfig(topology=topology, **ORACLE))
        for f in gap_files:
            assert lder(f.ref_lang, system.run(f).hypothesis, f.duration).lder == 0

    def test_oracle_speaker_turns_without_gaps(self, nogap_files):
        system = System(PipelineConfig(topology="sd_seg_sli", **ORACLE))
        for f in nogap_files:
            assert lder(f.ref_lang, system.run(f).hypothesis, f.duration).lder == 0

    def test_short_chunk_tail(self):
        f = two_language_file(10.0, 10.1)
        assert len(System(PipelineConfig(topology="sd_seg_sli")).run(f).hypothesis) > 0

    @pytest.mark.parametrize("topology", TOPOLOGIES)
    def test_silence(self, topology):
        f = FileInput("quiet", AudioBuffer(np.zeros(30 * SR)))
        assert len(System(PipelineConfig(topology=topology)).run(f).hypothesis) == 0

    def test_unsplit_segment_confuses_minority(self):
        f = two_language_file(8.0, 4.0)
        hyp = System(PipelineConfig(topology="vad_seg_sli", vad="energy", classifier="oracle")).run(f).hypothesis
        assert len(hyp) == 1 and hyp.labels() == ["da"]
        assert lder(f.ref_lang, hyp, f.duration).lc == pytest.approx(4 / 12, abs=0.02)

    def test_single_voice_negative_control(self):
        (f,) = synth_files(MixSpec("short", "none", n_files=1, target_file_len=40, seed=5, reuse_voice=True))
        cfg = PipelineConfig(topology="sd_seg_sli", diarizer="oracle", classifier="oracle")
        hyp = System(cfg).run(f).hypothesis
        assert lder(f.ref_lang, hyp, f.duration).lc > 0

    def test_monolingual_with_mask(self):
        (f,) = synth_files(MixSpec("short", "1s", n_files=1, target_file_len=20, languages=("sv",), seed=2))
        cfg = PipelineConfig(topology="vad_seg_sli", vad="energy", class_mask=["sv"])
        hyp = System(cfg).run(f).hypothesis
        assert len(hyp) and ler(f.ref_lang.replace(f.ref_lang.entries), hyp) == 0

    def test_frame_boundary(self):
        f = two_language_file(8.0, 8.0, ("sv", "en"))
        hyp = System(PipelineConfig(topology="vad_frame_sli", vad="energy")).run(f).hypothesis
        switches = [a.end for (a, la), (_, lb) in zip(hyp, list(hyp)[1:]) if la != lb]
        assert len(switches) == 1 and abs(switches[0] - 8.0) <= 1.0

    @pytest.mark.parametrize("topology", TOPOLOGIES)
    def test_hypotheses_well_formed(self, topology, gap_files):
        system = System(PipelineConfig(topology=topology))
        for f in gap_files:
            segs = [s for s, _ in system.run(f).hypothesis]
            assert all(0 <= s.start < s.end <= f.duration + 1e-9 for s in segs)
            assert all(a.end <= b.start + 1e-9 for a, b in zip(segs, segs[1:]))


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("sets")
    return write_mix_set(MixSpec("short", "1s", n_files=3, target_file_len=30, seed=8), root)


class TestRunner:
    def test_artifacts(self, small_set, tmp_path):
        cfg = PipelineConfig(topology="vad_seg_sli")
        res = run_benchmark(cfg, load_manifest(small_set), tmp_path, transcribe=True)
        assert res.exit_code == 0 and res.run_dir.name == f"vad_seg_sli-{cfg.config_hash()}"
        names = {p.name for p in res.run_dir.iterdir()}
        assert {"config.json", "hyp", "report.csv", "per_file.csv", "report.json", "transcripts.json", "run.log"} <= names
        report = json.loads((res.run_dir / "report.json").read_text())
        assert report["rows"][0]["method"] == "vad_seg_sli" and report["failed"] == []
        assert res.evaluation.wer is not None and res.evaluation.wer.ref_words > 0
        assert "s audio in" in (res.run_dir / "run.log").read_text()
        assert "s audio in" not in (res.run_dir / "report.json").read_text()

    def test_jobs_do_not_change_outputs(self, small_set, tmp_path):
        cfg = PipelineConfig(topology="vad_frame_sli")
        one = run_benchmark(cfg, load_manifest(small_set), tmp_path / "one").run_dir
        two = run_benchmark(cfg, load_manifest(small_set), tmp_path / "two", jobs=2).run_dir
        for name in ["report.csv", "per_file.csv", "report.json"] + [f"hyp/{p.name}" for p in (one / "hyp").iterdir()]:
            assert (one / name).read_bytes() == (two / name).read_bytes()

    def test_bad_wav_recorded(self, small_set, tmp_path):
        sources = load_manifest(small_set)
        broken = tmp_path / "broken.wav"
        broken.write_bytes(b"not a wav")
        sources[0] = type(sources[0])("aaa-broken", broken)
        res = run_benchmark(PipelineConfig(**ORACLE), sources, tmp_path)
        assert [o.file_id for o in res.failed] == ["aaa-broken"] and res.exit_code == 2
        assert len(res.evaluation.files) == 2


class TestCli:
    def test_synth_identify_score_report(self, tmp_path, capsys):
        assert main(["synth", "--n-files", "2", "--target-len", "20", "--seed", "4", "--out-dir", str(tmp_path)]) == 0
        set_dir = capsys.readouterr().out.strip().splitlines()[-1]
        assert main(["identify", set_dir, "--topology", "sd_seg_sli", "--out-dir", str(tmp_path / "runs")]) == 0
        run_dir = capsys.readouterr().out.strip().splitlines()[-1]
        rc = main(["score", "--ref", f"{set_dir}/rttm", "--hyp", f"{run_dir}/hyp", "--manifest", set_dir, "--out-dir", str(tmp_path)])
        assert rc == 0
        scored = capsys.readouterr().out.splitlines()
        assert scored[0].startswith("method,")
        assert main(["report", run_dir, "--out-dir", str(tmp_path)]) == 0
        reported = capsys.readouterr().out.splitlines()
        # the scored hypothesis went through 1 ms RTTM rounding
        pairs = zip(reported[1].split(",")[1:5], scored[1].split(",")[1:5])
        assert all(abs(float(a) - float(b)) <= 0.02 for a, b in pairs)

    def test_config_error_exit(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"smoothing": 3}')
        assert main(["identify", str(tmp_path), "--config", str(bad)]) == 1

    def test_missing_input_exit(self, tmp_path):
        assert main(["identify", str(tmp_path / "nope.wav"), "--out-dir", str(tmp_path)]) == 2
