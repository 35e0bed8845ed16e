"""Synthetic session generator.

Builds sessions the whole pipeline can run on without any recording
hardware: tone bursts stand in for the spoken zone keywords, the
matching transcript is written exactly as a recognizer would have
produced it, and a corruption model drops or garbles tokens so the
rectification stage has real work to do. Ground truth (true timeline
and true frame labels) is returned alongside, making end-to-end
accuracy measurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .annotate import FrameLabels, MarkerDetection, MarkerTimeline, emit_frame_labels, write_labels_csv, write_timeline_json
from .audio import AudioTrack, write_wav
from .errors import ParseError
from .sessions import SessionManifest, save_manifest
from .stt import DIGIT_WORDS, Transcript, TranscriptToken, save_transcript

# Guaranteed never to match a keyword or alias; stands in for the
# recognizer mishearing a digit as an arbitrary word.
SUBSTITUTE_WORD = "garbled"


@dataclass(frozen=True)
class CorruptionSpec:
    """Transcript corruption rates, applied per token."""

    miss_rate: float = 0.0
    substitute_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("miss_rate", "substitute_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic session.

    Bursts are laid out as gap, burst, gap, burst, ..., gap; the default
    duration is exactly that layout. burst_freq_hz must sit inside the
    voice band so the rectifier can find the bursts.
    """

    n_zones: int = 9
    fps: float = 30.0
    duration_s: float | None = None
    burst_freq_hz: float = 800.0
    burst_len_s: float = 0.5
    gap_len_s: float = 0.9
    noise_rms: float = 0.01
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    seed: int = 0
    sample_rate_hz: int = 16000
    offset_frames: int = 10

    def __post_init__(self) -> None:
        if self.n_zones < 1 or self.n_zones > len(DIGIT_WORDS):
            raise ValueError(f"n_zones must lie in 1..{len(DIGIT_WORDS)}, got {self.n_zones}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not (300.0 < self.burst_freq_hz < 3000.0):
            raise ValueError(
                f"burst_freq_hz must lie inside the voice band (300, 3000), got {self.burst_freq_hz}"
            )
        if self.burst_len_s <= 0 or self.gap_len_s <= 0:
            raise ValueError("burst_len_s and gap_len_s must be positive")
        if not (0.0 <= self.noise_rms < 0.25):
            raise ValueError(f"noise_rms must lie in [0, 0.25), got {self.noise_rms}")
        if self.sample_rate_hz < 8000:
            raise ValueError(f"sample_rate_hz must be >= 8000, got {self.sample_rate_hz}")
        if self.offset_frames < 0:
            raise ValueError(f"offset_frames must be >= 0, got {self.offset_frames}")
        if self.duration_s is not None and self.duration_s < self.layout_duration_s:
            raise ValueError(
                f"duration_s {self.duration_s} too short for {self.n_zones} bursts "
                f"(layout needs {self.layout_duration_s:.3f} s)"
            )

    @property
    def layout_duration_s(self) -> float:
        return self.gap_len_s + self.n_zones * (self.burst_len_s + self.gap_len_s)

    @property
    def resolved_duration_s(self) -> float:
        return self.duration_s if self.duration_s is not None else self.layout_duration_s

    @property
    def n_frames(self) -> int:
        return int(round(self.resolved_duration_s * self.fps))

    def burst_interval(self, zone: int) -> tuple[float, float]:
        """(start_s, end_s) of the burst for a 1-based zone."""
        start = self.gap_len_s + (zone - 1) * (self.burst_len_s + self.gap_len_s)
        return start, start + self.burst_len_s


@dataclass
class GroundTruth:
    """What a perfect pipeline would produce for a synthetic session."""

    timeline: MarkerTimeline
    frame_labels: FrameLabels
    fps: float
    n_frames: int
    offset_frames: int
    missed_zones: tuple[int, ...]
    substituted_zones: tuple[int, ...]


_RAMP_S = 0.005  # raised-cosine edges avoid gating clicks


def _render_audio(spec: SynthSpec, rng: np.random.Generator) -> AudioTrack:
    rate = spec.sample_rate_hz
    n_samples = int(round(spec.resolved_duration_s * rate))
    if spec.noise_rms > 0:
        samples = rng.normal(0.0, spec.noise_rms, n_samples)
        # hard-truncate so burst + noise stays within full scale by construction
        np.clip(samples, -4.0 * spec.noise_rms, 4.0 * spec.noise_rms, out=samples)
    else:
        samples = np.zeros(n_samples)
    amp = 1.0 - 4.0 * spec.noise_rms

    n_burst = int(round(spec.burst_len_s * rate))
    t = np.arange(n_burst) / rate
    tone = amp * np.sin(2.0 * np.pi * spec.burst_freq_hz * t)
    ramp_n = min(int(round(_RAMP_S * rate)), n_burst // 2)
    if ramp_n > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp_n) / ramp_n))
        tone[:ramp_n] *= ramp
        tone[-ramp_n:] *= ramp[::-1]

    for zone in range(1, spec.n_zones + 1):
        start_s, _ = spec.burst_interval(zone)
        i0 = int(round(start_s * rate))
        samples[i0 : i0 + n_burst] += tone
    return AudioTrack(samples, rate, source_channels=1)


def _corrupt_tokens(
    spec: SynthSpec, tokens: Iterable[TranscriptToken], rng: np.random.Generator
) -> tuple[list[TranscriptToken], list[int], list[int]]:
    kept: list[TranscriptToken] = []
    missed: list[int] = []
    substituted: list[int] = []
    for zone, token in enumerate(tokens, start=1):
        if rng.uniform() < spec.corruption.miss_rate:
            missed.append(zone)
            continue
        if rng.uniform() < spec.corruption.substitute_rate:
            substituted.append(zone)
            token = TranscriptToken(SUBSTITUTE_WORD, token.start_s, token.end_s, token.confidence)
        kept.append(token)
    return kept, missed, substituted


def generate(
    spec: SynthSpec, session_id: str | None = None, subject_id: str | None = None
) -> tuple[AudioTrack, Transcript, GroundTruth, SessionManifest]:
    """Generate one synthetic session.

    Deterministic in `spec`: audio and corruption draw from independent
    streams derived from the seed. The returned manifest carries a
    relative audio path; `write_session` materializes it on disk.
    """
    if session_id is None:
        session_id = f"synth-{spec.seed:04d}"
    if subject_id is None:
        subject_id = f"subject-{spec.seed:04d}"
    rng_audio = np.random.default_rng([spec.seed, 0])
    rng_corrupt = np.random.default_rng([spec.seed, 1])

    track = _render_audio(spec, rng_audio)

    detections = []
    clean_tokens = []
    for zone in range(1, spec.n_zones + 1):
        start_s, end_s = spec.burst_interval(zone)
        detections.append(MarkerDetection(zone, start_s, end_s, "stt", 1.0))
        clean_tokens.append(TranscriptToken(DIGIT_WORDS[zone - 1], start_s, end_s, 1.0))
    timeline = MarkerTimeline(detections, session_id=session_id, n_zones=spec.n_zones)
    frame_labels = emit_frame_labels(timeline, spec.fps, spec.n_frames, spec.offset_frames)

    kept, missed, substituted = _corrupt_tokens(spec, clean_tokens, rng_corrupt)
    transcript = Transcript(tokens=kept, source_id="synthetic")

    truth = GroundTruth(
        timeline=timeline,
        frame_labels=frame_labels,
        fps=spec.fps,
        n_frames=spec.n_frames,
        offset_frames=spec.offset_frames,
        missed_zones=tuple(missed),
        substituted_zones=tuple(substituted),
    )
    manifest = SessionManifest(
        session_id=session_id,
        subject_id=subject_id,
        audio_path=Path(f"{session_id}.wav"),
        fps=spec.fps,
        n_frames=spec.n_frames,
        transcript_path=Path(f"{session_id}.transcript.json"),
    )
    return track, transcript, truth, manifest


def write_session(
    spec: SynthSpec,
    out_dir: str | Path,
    session_id: str | None = None,
    subject_id: str | None = None,
) -> tuple[SessionManifest, GroundTruth]:
    """Generate a session and write its files under out_dir.

    Produces <id>.wav, <id>.transcript.json, <id>.truth.csv, and
    <id>.truth-timeline.json; the returned manifest points at the
    written audio.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    track, transcript, truth, manifest = generate(spec, session_id, subject_id)
    sid = manifest.session_id
    write_wav(out_dir / f"{sid}.wav", track)
    save_transcript(transcript, out_dir / f"{sid}.transcript.json")
    write_labels_csv(truth.frame_labels, out_dir / f"{sid}.truth.csv")
    write_timeline_json(truth.timeline, out_dir / f"{sid}.truth-timeline.json")
    manifest = SessionManifest(
        session_id=sid,
        subject_id=manifest.subject_id,
        audio_path=out_dir / f"{sid}.wav",
        fps=manifest.fps,
        n_frames=manifest.n_frames,
        transcript_path=out_dir / f"{sid}.transcript.json",
    )
    return manifest, truth


@dataclass(frozen=True)
class DatasetSpec:
    """A batch of synthetic sessions: one base spec, consecutive seeds."""

    base: SynthSpec
    n_sessions: int = 1

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise ValueError(f"n_sessions must be >= 1, got {self.n_sessions}")

    def session_spec(self, index: int) -> SynthSpec:
        return replace(self.base, seed=self.base.seed + index)


def dataset_spec_from_obj(obj: dict) -> DatasetSpec:
    """Build a DatasetSpec from a decoded spec-file object.

    The file holds SynthSpec fields plus n_sessions; corruption rates
    appear as miss_rate / substitute_rate.
    """
    known = {
        "n_zones", "fps", "duration_s", "burst_freq_hz", "burst_len_s", "gap_len_s",
        "noise_rms", "seed", "sample_rate_hz", "offset_frames",
    }
    unknown = set(obj) - known - {"n_sessions", "miss_rate", "substitute_rate"}
    if unknown:
        raise ParseError(f"unknown synth spec field(s): {sorted(unknown)}")
    kwargs = {k: obj[k] for k in known if k in obj}
    corruption = CorruptionSpec(
        miss_rate=float(obj.get("miss_rate", 0.0)),
        substitute_rate=float(obj.get("substitute_rate", 0.0)),
    )
    base = SynthSpec(corruption=corruption, **kwargs)
    return DatasetSpec(base=base, n_sessions=int(obj.get("n_sessions", 1)))


def write_dataset(dataset: DatasetSpec, out_dir: str | Path) -> Path:
    """Write a whole synthetic dataset; returns the manifest path.

    Sessions get ids synth-<seed> with one subject each; the manifest
    lands at <out_dir>/manifest.json and a corruption summary at
    <out_dir>/synth-report.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    report: dict[str, dict] = {}
    for i in range(dataset.n_sessions):
        spec = dataset.session_spec(i)
        manifest, truth = write_session(spec, out_dir)
        manifests.append(manifest)
        report[manifest.session_id] = {
            "seed": spec.seed,
            "missed_zones": list(truth.missed_zones),
            "substituted_zones": list(truth.substituted_zones),
        }
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifests, manifest_path)
    (out_dir / "synth-report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
