"""Synthetic session generator: layout, audio, corruption, dataset writing."""

import json

import numpy as np
import pytest

from gazemark.annotate import align_keywords, emit_frame_labels
from gazemark.audio import read_wav, voiced_segments
from gazemark.errors import ParseError
from gazemark.sessions import load_dataset
from gazemark.stt import DIGIT_WORDS
from gazemark.synth import (
    SUBSTITUTE_WORD,
    CorruptionSpec,
    DatasetSpec,
    SynthSpec,
    dataset_spec_from_obj,
    generate,
    write_dataset,
    write_session,
)


class TestSynthSpec:
    def test_default_layout(self):
        spec = SynthSpec()
        assert spec.layout_duration_s == pytest.approx(0.9 + 9 * (0.5 + 0.9))
        assert spec.resolved_duration_s == pytest.approx(13.5)
        assert spec.n_frames == 405

    def test_burst_interval(self):
        spec = SynthSpec()
        assert spec.burst_interval(1) == (pytest.approx(0.9), pytest.approx(1.4))
        assert spec.burst_interval(2) == (pytest.approx(2.3), pytest.approx(2.8))
        assert spec.burst_interval(9) == (pytest.approx(12.1), pytest.approx(12.6))

    def test_explicit_duration_extends(self):
        spec = SynthSpec(duration_s=20.0)
        assert spec.n_frames == 600

    def test_duration_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            SynthSpec(duration_s=5.0)

    def test_burst_freq_must_sit_in_voice_band(self):
        with pytest.raises(ValueError, match="voice band"):
            SynthSpec(burst_freq_hz=5000.0)
        with pytest.raises(ValueError, match="voice band"):
            SynthSpec(burst_freq_hz=300.0)

    def test_corruption_rates_validated(self):
        with pytest.raises(ValueError, match="miss_rate"):
            CorruptionSpec(miss_rate=1.5)
        with pytest.raises(ValueError, match="substitute_rate"):
            CorruptionSpec(substitute_rate=-0.1)

    def test_noise_rms_bounded(self):
        with pytest.raises(ValueError, match="noise_rms"):
            SynthSpec(noise_rms=0.3)


class TestGenerate:
    def test_deterministic(self):
        a_track, a_tr, a_truth, _ = generate(SynthSpec(seed=5))
        b_track, b_tr, b_truth, _ = generate(SynthSpec(seed=5))
        assert np.array_equal(a_track.samples, b_track.samples)
        assert a_tr == b_tr
        assert a_truth.missed_zones == b_truth.missed_zones
        assert np.array_equal(a_truth.frame_labels.zones, b_truth.frame_labels.zones)

    def test_seed_changes_audio(self):
        a, *_ = generate(SynthSpec(seed=1, noise_rms=0.02))
        b, *_ = generate(SynthSpec(seed=2, noise_rms=0.02))
        assert not np.array_equal(a.samples, b.samples)

    def test_track_shape(self):
        spec = SynthSpec(seed=3)
        track, *_ = generate(spec)
        assert track.sample_rate_hz == 16000
        assert track.n_samples == int(round(13.5 * 16000))
        assert np.max(np.abs(track.samples)) <= 1.0

    def test_peak_amplitude_leaves_noise_headroom(self):
        spec = SynthSpec(seed=4, noise_rms=0.02)
        track, *_ = generate(spec)
        # burst amplitude 1 - 4*rms plus noise truncated at 4 sigma stays inside +-1
        burst_peak = np.max(np.abs(track.samples))
        assert burst_peak <= 1.0
        assert burst_peak >= 1.0 - 8 * 0.02

    def test_clean_transcript_words(self):
        _, transcript, truth, _ = generate(SynthSpec(seed=0))
        assert truth.missed_zones == ()
        assert truth.substituted_zones == ()
        assert [t.text for t in transcript.tokens] == list(DIGIT_WORDS)
        assert transcript.source_id == "synthetic"

    def test_truth_labels_match_emitter(self):
        spec = SynthSpec(seed=2)
        _, _, truth, _ = generate(spec)
        again = emit_frame_labels(truth.timeline, spec.fps, spec.n_frames, spec.offset_frames)
        assert np.array_equal(truth.frame_labels.zones, again.zones)

    def test_alignment_on_clean_session_is_exact(self):
        _, transcript, truth, _ = generate(SynthSpec(seed=7))
        tl = align_keywords(transcript, session_id="x")
        assert tl.zones() == tuple(range(1, 10))
        for det, ref in zip(tl.detections, truth.timeline.detections):
            assert det.start_s == pytest.approx(ref.start_s)
            assert det.end_s == pytest.approx(ref.end_s)

    def test_bursts_found_by_segmenter(self):
        spec = SynthSpec(seed=9)
        track, *_ = generate(spec)
        segs = voiced_segments(track)
        assert len(segs) == 9
        for seg, zone in zip(segs, range(1, 10)):
            start, end = spec.burst_interval(zone)
            assert start - 0.26 <= seg.start_s <= start + 0.01
            assert end - 0.01 <= seg.end_s <= end + 0.26

    def test_missed_zone_removes_token(self):
        spec = SynthSpec(seed=3, corruption=CorruptionSpec(miss_rate=0.3, substitute_rate=0.1))
        _, transcript, truth, _ = generate(spec)
        words = [t.text for t in transcript.tokens]
        for zone in truth.missed_zones:
            assert DIGIT_WORDS[zone - 1] not in words
        assert len(words) == 9 - len(truth.missed_zones)

    def test_substitution_replaces_word_keeps_times(self):
        spec = SynthSpec(seed=3, corruption=CorruptionSpec(miss_rate=0.3, substitute_rate=0.1))
        _, transcript, truth, _ = generate(spec)
        for zone in truth.substituted_zones:
            start, end = spec.burst_interval(zone)
            hits = [t for t in transcript.tokens if t.text == SUBSTITUTE_WORD and abs(t.start_s - start) < 1e-9]
            assert len(hits) == 1
            assert hits[0].end_s == pytest.approx(end)

    def test_corruption_rates_statistics(self):
        missed = 0
        total = 0
        for seed in range(120):
            spec = SynthSpec(seed=seed, n_zones=9, corruption=CorruptionSpec(miss_rate=0.15))
            _, _, truth, _ = generate(spec)
            missed += len(truth.missed_zones)
            total += 9
        rate = missed / total
        assert 0.10 <= rate <= 0.20

    def test_default_ids_from_seed(self):
        _, _, _, manifest = generate(SynthSpec(seed=12))
        assert manifest.session_id == "synth-0012"
        assert manifest.subject_id == "subject-0012"

    def test_explicit_ids(self):
        _, _, _, manifest = generate(SynthSpec(seed=0), session_id="s", subject_id="p")
        assert manifest.session_id == "s"
        assert manifest.subject_id == "p"


class TestWriteSession:
    def test_files_written(self, tmp_path):
        manifest, truth = write_session(SynthSpec(seed=1), tmp_path)
        sid = manifest.session_id
        for suffix in (".wav", ".transcript.json", ".truth.csv", ".truth-timeline.json"):
            assert (tmp_path / f"{sid}{suffix}").exists()
        track = read_wav(manifest.audio_path)
        assert track.n_samples == int(round(13.5 * 16000))

    def test_written_audio_still_segmentable(self, tmp_path):
        # 16-bit quantization must not break burst detection
        manifest, _ = write_session(SynthSpec(seed=6), tmp_path)
        track = read_wav(manifest.audio_path)
        assert len(voiced_segments(track)) == 9


class TestDatasetSpec:
    def test_session_specs_advance_seed(self):
        ds = DatasetSpec(base=SynthSpec(seed=100), n_sessions=3)
        assert [ds.session_spec(i).seed for i in range(3)] == [100, 101, 102]

    def test_from_obj(self):
        ds = dataset_spec_from_obj(
            {"n_sessions": 4, "seed": 7, "miss_rate": 0.2, "substitute_rate": 0.05, "noise_rms": 0.02}
        )
        assert ds.n_sessions == 4
        assert ds.base.seed == 7
        assert ds.base.corruption.miss_rate == 0.2
        assert ds.base.noise_rms == 0.02

    def test_from_obj_rejects_unknown_key(self):
        with pytest.raises(ParseError, match="unknown"):
            dataset_spec_from_obj({"n_sessions": 2, "bogus": 1})

    def test_from_obj_n_sessions_defaults_to_one(self):
        assert dataset_spec_from_obj({"seed": 3}).n_sessions == 1


class TestWriteDataset:
    def test_manifest_and_report(self, tmp_path):
        ds = DatasetSpec(
            base=SynthSpec(seed=50, corruption=CorruptionSpec(miss_rate=0.5)), n_sessions=3
        )
        manifest_path = write_dataset(ds, tmp_path)
        sessions = load_dataset(manifest_path)
        assert len(sessions) == 3
        assert [s.session_id for s in sessions] == ["synth-0050", "synth-0051", "synth-0052"]
        for s in sessions:
            assert s.audio_path.exists()
            assert s.transcript_path.exists()
        report = json.loads((tmp_path / "synth-report.json").read_text())
        assert set(report) == {"synth-0050", "synth-0051", "synth-0052"}
        assert report["synth-0050"]["seed"] == 50
        assert "missed_zones" in report["synth-0050"]

    def test_distinct_subjects(self, tmp_path):
        ds = DatasetSpec(base=SynthSpec(seed=0), n_sessions=3)
        sessions = load_dataset(write_dataset(ds, tmp_path))
        assert len({s.subject_id for s in sessions}) == 3
