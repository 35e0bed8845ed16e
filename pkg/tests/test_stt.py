"""Transcript model, JSON schema handling, and transcription backends."""

import json
import logging
import sys

import numpy as np
import pytest

from gazemark.audio import AudioTrack
from gazemark.errors import BackendError, ParseError
from gazemark.stt import (
    ALIAS_CONFIDENCE_FACTOR,
    DEFAULT_ALIASES,
    DIGIT_WORDS,
    ExternalCommandBackend,
    KeywordSet,
    SidecarBackend,
    ToneSpotterBackend,
    Transcript,
    TranscriptToken,
    load_transcript,
    parse_transcript,
    run_backend,
    save_transcript,
)

RATE = 16000


def tok(text, start, end, conf=1.0):
    return TranscriptToken(text=text, start_s=start, end_s=end, confidence=conf)


class TestTranscriptToken:
    def test_lowercases(self):
        assert tok("Three", 0.0, 0.5).text == "three"

    def test_rejects_bad_times(self):
        with pytest.raises(ValueError, match="ends before"):
            tok("one", 1.0, 0.5)
        with pytest.raises(ValueError, match="negative start"):
            tok("one", -0.1, 0.5)

    def test_rejects_bad_confidence(self):
        with pytest.raises(ValueError, match="confidence"):
            tok("one", 0.0, 0.5, conf=1.5)

    def test_rejects_empty_text(self):
        with pytest.raises(ValueError, match="text"):
            tok("", 0.0, 0.5)


class TestTranscript:
    def test_sorts_tokens(self):
        tr = Transcript(tokens=[tok("two", 2.0, 2.5), tok("one", 0.5, 1.0)])
        assert [t.text for t in tr.tokens] == ["one", "two"]

    def test_len(self):
        tr = Transcript(tokens=[tok("one", 0.5, 1.0), tok("two", 2.0, 2.5)])
        assert len(tr) == 2

    def test_empty_ok(self):
        assert len(Transcript(tokens=[])) == 0


class TestKeywordSet:
    def test_defaults(self):
        ks = KeywordSet()
        assert ks.n_zones == 9
        assert ks.keyword_for_zone(1) == "one"
        assert ks.keyword_for_zone(9) == "nine"

    def test_exact_match(self):
        ks = KeywordSet()
        matched, via_alias = ks.matches(3, "three")
        assert matched and not via_alias

    def test_alias_match(self):
        ks = KeywordSet()
        for zone, alias in [(1, "won"), (2, "to"), (2, "too"), (3, "tree"), (4, "for"), (4, "fore"), (8, "ate")]:
            matched, via_alias = ks.matches(zone, alias)
            assert matched and via_alias, (zone, alias)

    def test_no_cross_zone_alias(self):
        ks = KeywordSet()
        matched, _ = ks.matches(5, "won")
        assert not matched

    def test_zone_bounds(self):
        ks = KeywordSet()
        with pytest.raises(ValueError):
            ks.keyword_for_zone(0)
        with pytest.raises(ValueError):
            ks.keyword_for_zone(10)

    def test_custom_keywords(self):
        ks = KeywordSet(keywords=("alpha", "beta"), aliases={"beta": ("bravo",)})
        assert ks.n_zones == 2
        assert ks.matches(2, "bravo") == (True, True)


def sample_obj():
    return {
        "source_id": "demo",
        "tokens": [
            {"text": "one", "start_s": 0.5, "end_s": 0.9, "confidence": 0.92},
            {"text": "two", "start_s": 1.8, "end_s": 2.2, "confidence": 0.88},
        ],
    }


class TestParseTranscript:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.json"
        tr = parse_transcript(sample_obj(), where="unit")
        save_transcript(tr, path)
        back = load_transcript(path)
        assert back == tr

    def test_missing_field_named(self):
        obj = sample_obj()
        del obj["tokens"][0]["end_s"]
        with pytest.raises(ParseError, match="end_s"):
            parse_transcript(obj, where="unit")

    def test_wrong_type_named(self):
        obj = sample_obj()
        obj["tokens"][1]["confidence"] = "high"
        with pytest.raises(ParseError, match="confidence"):
            parse_transcript(obj, where="unit")

    def test_tokens_not_list(self):
        with pytest.raises(ParseError, match="tokens"):
            parse_transcript({"source_id": "x", "tokens": "nope"}, where="unit")

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"source_id": "x", "tokens": [}')
        with pytest.raises(ParseError, match=r"line \d+"):
            load_transcript(path)

    def test_unsorted_tokens_warn(self, tmp_path, caplog):
        obj = sample_obj()
        obj["tokens"].reverse()
        path = tmp_path / "rev.json"
        path.write_text(json.dumps(obj))
        with caplog.at_level(logging.WARNING):
            tr = load_transcript(path)
        assert any("sorted" in rec.message for rec in caplog.records)
        assert [t.text for t in tr.tokens] == ["one", "two"]


class TestSidecarBackend:
    def make_track(self):
        return AudioTrack(np.zeros(RATE), RATE)

    def test_explicit_path(self, tmp_path):
        path = tmp_path / "t.json"
        save_transcript(parse_transcript(sample_obj(), where="unit"), path)
        backend = SidecarBackend()
        tr = backend.transcribe(self.make_track(), audio_path=None, transcript_path=path)
        assert len(tr.tokens) == 2

    def test_derived_from_audio_stem(self, tmp_path):
        audio = tmp_path / "sess01.wav"
        audio.touch()
        save_transcript(parse_transcript(sample_obj(), where="unit"), tmp_path / "sess01.transcript.json")
        backend = SidecarBackend()
        tr = backend.transcribe(self.make_track(), audio_path=audio, transcript_path=None)
        assert tr.tokens[0].text == "one"

    def test_missing_sidecar(self, tmp_path):
        backend = SidecarBackend()
        with pytest.raises(BackendError, match="transcript"):
            backend.transcribe(self.make_track(), audio_path=tmp_path / "nothing.wav", transcript_path=None)

    def test_no_path_at_all(self):
        backend = SidecarBackend()
        with pytest.raises(BackendError):
            backend.transcribe(self.make_track(), audio_path=None, transcript_path=None)


class TestToneSpotterBackend:
    def test_bursts_become_digit_tokens(self):
        rate = RATE
        x = np.zeros(6 * rate)
        for i, start in enumerate([1.0, 2.5, 4.0]):
            n = int(0.5 * rate)
            t = np.arange(n) / rate
            x[int(start * rate) : int(start * rate) + n] = 0.8 * np.sin(2 * np.pi * 900 * t)
        backend = ToneSpotterBackend()
        tr = backend.transcribe(AudioTrack(x, rate), audio_path=None, transcript_path=None)
        assert [t.text for t in tr.tokens] == ["one", "two", "three"]
        assert all(t.confidence == 1.0 for t in tr.tokens)
        for t, start in zip(tr.tokens, [1.0, 2.5, 4.0]):
            assert abs(t.start_s - start) <= 0.25
            assert abs(t.end_s - (start + 0.5)) <= 0.25

    def test_silence_gives_empty(self):
        backend = ToneSpotterBackend()
        tr = backend.transcribe(AudioTrack(np.zeros(2 * RATE), RATE), audio_path=None, transcript_path=None)
        assert tr.tokens == []


class TestExternalCommandBackend:
    def write_script(self, tmp_path, body):
        script = tmp_path / "fake_stt.py"
        script.write_text(body)
        return ExternalCommandBackend(command=(sys.executable, str(script)))

    def test_success(self, tmp_path):
        obj = sample_obj()
        backend = self.write_script(
            tmp_path,
            "import json, sys\n"
            f"print(json.dumps({obj!r}))\n",
        )
        tr = backend.transcribe(AudioTrack(np.zeros(RATE), RATE), audio_path=tmp_path / "a.wav", transcript_path=None)
        assert len(tr.tokens) == 2

    def test_receives_audio_path_argument(self, tmp_path):
        backend = self.write_script(
            tmp_path,
            "import json, sys\n"
            'print(json.dumps({"source_id": sys.argv[1], "tokens": []}))\n',
        )
        audio = tmp_path / "given.wav"
        tr = backend.transcribe(AudioTrack(np.zeros(RATE), RATE), audio_path=audio, transcript_path=None)
        assert tr.source_id == str(audio)

    def test_nonzero_exit_raises_with_stderr(self, tmp_path):
        backend = self.write_script(
            tmp_path,
            "import sys\nsys.stderr.write('engine exploded')\nsys.exit(3)\n",
        )
        with pytest.raises(BackendError, match="engine exploded"):
            backend.transcribe(AudioTrack(np.zeros(RATE), RATE), audio_path=tmp_path / "a.wav", transcript_path=None)

    def test_bad_json_output(self, tmp_path):
        backend = self.write_script(tmp_path, "print('not json')\n")
        with pytest.raises(BackendError):
            backend.transcribe(AudioTrack(np.zeros(RATE), RATE), audio_path=tmp_path / "a.wav", transcript_path=None)

    def test_timeout(self, tmp_path):
        script = tmp_path / "slow.py"
        script.write_text("import time\ntime.sleep(30)\n")
        backend = ExternalCommandBackend(command=(sys.executable, str(script)), timeout_s=0.5)
        with pytest.raises(BackendError, match="timed out"):
            backend.transcribe(AudioTrack(np.zeros(RATE), RATE), audio_path=tmp_path / "a.wav", transcript_path=None)


class TestRunBackend:
    def test_warns_on_token_past_duration(self, tmp_path, caplog):
        path = tmp_path / "t.json"
        obj = {"source_id": "x", "tokens": [{"text": "one", "start_s": 3.0, "end_s": 3.5, "confidence": 0.9}]}
        path.write_text(json.dumps(obj))
        track = AudioTrack(np.zeros(RATE), RATE)
        with caplog.at_level(logging.WARNING):
            run_backend(track, SidecarBackend(), transcript_path=path)
        assert any("past the audio end" in rec.message for rec in caplog.records)


class TestConstants:
    def test_digit_words(self):
        assert DIGIT_WORDS == ("one", "two", "three", "four", "five", "six", "seven", "eight", "nine")

    def test_alias_factor(self):
        assert ALIAS_CONFIDENCE_FACTOR == 0.9

    def test_default_alias_table(self):
        assert DEFAULT_ALIASES["two"] == ("to", "too")
        assert DEFAULT_ALIASES["four"] == ("for", "fore")
        assert "tree" in DEFAULT_ALIASES["three"]
        assert "won" in DEFAULT_ALIASES["one"]
        assert "ate" in DEFAULT_ALIASES["eight"]
