"""Mono audio ingestion and band-energy analysis.

This module owns the raw-signal layer of the pipeline: decoding WAV
files, mixing to mono, short-window magnitude spectra, and detection of
voice-band segments. Everything downstream (transcript rectification,
the tone-spotter backend) is built on `analyze_window` and
`voiced_segments`.

All audio is represented as float64 samples normalized to [-1, 1].
"""

from __future__ import annotations

import logging
import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, StructuralError

logger = logging.getLogger(__name__)

MIN_SAMPLE_RATE_HZ = 8000
MIN_WINDOW_SAMPLES = 16

# Amplitude slack for float inputs that overshoot full scale by rounding.
_AMPLITUDE_TOL = 1e-6


@dataclass(frozen=True)
class AudioTrack:
    """A mono audio signal.

    samples: float64 array, every value finite and within [-1, 1].
    sample_rate_hz: sampling rate, at least 8 kHz.
    source_channels: channel count of the original material before mixdown.
    """

    samples: np.ndarray
    sample_rate_hz: int
    source_channels: int = 1

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        peak = float(np.max(np.abs(samples))) if samples.size else 0.0
        if peak > 1.0 + _AMPLITUDE_TOL:
            raise ValueError(f"samples exceed full scale: peak amplitude {peak:.6g}")
        if peak > 1.0:
            samples = np.clip(samples, -1.0, 1.0)
        if int(self.sample_rate_hz) < MIN_SAMPLE_RATE_HZ:
            raise ValueError(
                f"sample_rate_hz must be >= {MIN_SAMPLE_RATE_HZ}, got {self.sample_rate_hz}"
            )
        if self.source_channels < 1:
            raise ValueError(f"source_channels must be >= 1, got {self.source_channels}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def n_samples(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class AnalysisWindow:
    """Spectral summary of one analysis window."""

    start_s: float
    duration_s: float
    dominant_freq_hz: float
    band_energy_ratio: float


@dataclass(frozen=True)
class VoicedSegment:
    """A maximal run of voice-band-positive windows."""

    start_s: float
    end_s: float
    mean_band_ratio: float

    def __post_init__(self) -> None:
        if not self.end_s > self.start_s:
            raise ValueError(f"segment must have positive length: [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def to_mono(channels: Sequence[np.ndarray], sample_rate_hz: int) -> AudioTrack:
    """Mix one or more equal-length channels down to a mono track.

    The mixdown is the arithmetic mean across channels, so a mono input
    comes back unchanged and swapping channel order changes nothing.
    """
    if len(channels) == 0:
        raise StructuralError("to_mono requires at least one channel")
    arrays = [np.asarray(ch, dtype=np.float64) for ch in channels]
    length = arrays[0].size
    for i, arr in enumerate(arrays):
        if arr.ndim != 1:
            raise StructuralError(f"channel {i} is not one-dimensional")
        if arr.size != length:
            raise StructuralError(
                f"channel length mismatch: channel 0 has {length} samples, channel {i} has {arr.size}"
            )
    mixed = arrays[0] if len(arrays) == 1 else np.mean(np.stack(arrays), axis=0)
    return AudioTrack(mixed, sample_rate_hz, source_channels=len(arrays))


def _window_slice(track: AudioTrack, start_s: float, duration_s: float) -> np.ndarray:
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    i0 = int(round(start_s * track.sample_rate_hz))
    n = int(round(duration_s * track.sample_rate_hz))
    if i0 < 0 or i0 + n > track.n_samples:
        raise ValueError(
            f"window [{start_s:.6g}, {start_s + duration_s:.6g}] s is outside the track "
            f"(duration {track.duration_s:.6g} s)"
        )
    if n < MIN_WINDOW_SAMPLES:
        raise ValueError(f"window holds {n} samples, need at least {MIN_WINDOW_SAMPLES}")
    return track.samples[i0 : i0 + n]


def _taper(n: int, window: str) -> np.ndarray:
    if window == "hann":
        return np.hanning(n)
    if window == "rectangular":
        return np.ones(n)
    raise ValueError(f"unknown taper {window!r}, expected 'hann' or 'rectangular'")


def magnitude_spectrum(
    track: AudioTrack,
    start_s: float,
    duration_s: float,
    window: str = "hann",
) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude spectrum of one window of the track.

    Returns (freqs_hz, magnitudes) covering 0 Hz through Nyquist. The
    window is tapered (Hann by default) and zero-padded to the next
    power of two, so frequencies are reported on the padded grid.
    """
    seg = _window_slice(track, start_s, duration_s)
    tapered = seg * _taper(seg.size, window)
    nfft = 1 << (seg.size - 1).bit_length()
    freqs = np.fft.rfftfreq(nfft, d=1.0 / track.sample_rate_hz)
    mags = np.abs(np.fft.rfft(tapered, nfft))
    return freqs, mags


def analyze_window(
    track: AudioTrack,
    start_s: float,
    duration_s: float,
    band_lo_hz: float,
    band_hi_hz: float,
    window: str = "hann",
) -> AnalysisWindow:
    """Dominant frequency and in-band energy fraction of one window.

    The zero-frequency bin is excluded from both the dominant-frequency
    search and the energy sums, so a DC offset cannot masquerade as
    signal. A window with no energy reports a ratio of 0.
    """
    nyquist = track.sample_rate_hz / 2.0
    if not (0.0 <= band_lo_hz < band_hi_hz <= nyquist):
        raise ValueError(
            f"band [{band_lo_hz}, {band_hi_hz}] Hz invalid for Nyquist {nyquist:.6g} Hz"
        )
    freqs, mags = magnitude_spectrum(track, start_s, duration_s, window=window)
    power = mags[1:] ** 2  # DC bin dropped
    freqs = freqs[1:]
    total = float(power.sum())
    if total == 0.0:
        return AnalysisWindow(start_s, duration_s, 0.0, 0.0)
    dominant = float(freqs[int(np.argmax(power))])
    in_band = (freqs >= band_lo_hz) & (freqs <= band_hi_hz)
    ratio = float(power[in_band].sum() / total)
    return AnalysisWindow(start_s, duration_s, dominant, ratio)


def voiced_segments(
    track: AudioTrack,
    window_s: float = 0.25,
    hop_s: float = 0.10,
    band: tuple[float, float] = (300.0, 3000.0),
    ratio_threshold: float = 0.5,
    window: str = "hann",
) -> list[VoicedSegment]:
    """Find maximal time spans dominated by in-band energy.

    The track is scanned with fixed-size windows at a fixed hop. A
    window counts as voiced when its dominant frequency lies inside
    `band` and its band-energy ratio reaches `ratio_threshold`.
    Overlapping voiced windows are merged; each returned segment records
    the mean ratio of the windows it absorbed. Segments are sorted and
    non-overlapping by construction.
    """
    if not (0.0 < hop_s <= window_s):
        raise ValueError(f"need 0 < hop_s <= window_s, got hop {hop_s}, window {window_s}")
    if not (0.0 <= ratio_threshold <= 1.0):
        raise ValueError(f"ratio_threshold must lie in [0, 1], got {ratio_threshold}")
    duration = track.duration_s
    if duration < window_s:
        return []

    starts: list[float] = []
    t = 0.0
    k = 0
    while t + window_s <= duration + 1e-9:
        starts.append(t)
        k += 1
        t = k * hop_s
    tail = duration - window_s
    if tail > starts[-1] + 1e-9:
        starts.append(tail)  # make sure the final samples get scanned

    segments: list[VoicedSegment] = []
    cur_start: float | None = None
    cur_end = 0.0
    ratios: list[float] = []

    def _close() -> None:
        nonlocal cur_start, ratios
        if cur_start is not None:
            segments.append(VoicedSegment(cur_start, cur_end, float(np.mean(ratios))))
        cur_start = None
        ratios = []

    for s in starts:
        win = analyze_window(track, s, window_s, band[0], band[1], window=window)
        passed = band[0] <= win.dominant_freq_hz <= band[1] and win.band_energy_ratio >= ratio_threshold
        if not passed:
            _close()
            continue
        if cur_start is not None and s <= cur_end + 1e-9:
            cur_end = s + window_s
            ratios.append(win.band_energy_ratio)
        else:
            _close()
            cur_start = s
            cur_end = s + window_s
            ratios = [win.band_energy_ratio]
    _close()
    return segments


# --- WAV decoding -----------------------------------------------------------
#
# Hand-rolled RIFF parser: the toolkit must accept 8/16/24/32-bit integer PCM
# plus 32-bit float, and reject anything else with a diagnostic that names the
# format tag. The stdlib reader cannot do the float or 24-bit cases cleanly.

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_FORMAT_TAG_NAMES = {
    0x0002: "ADPCM",
    0x0006: "A-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0x0055: "MPEG Layer 3",
}


def _read_chunks(data: bytes, path: Path) -> dict[bytes, bytes]:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ParseError(f"{path}: not a RIFF/WAVE file")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_end = pos + 8 + size
        if body_end > len(data):
            raise ParseError(f"{path}: truncated {cid!r} chunk (declares {size} bytes)")
        if cid not in chunks:  # first occurrence wins
            chunks[cid] = data[pos + 8 : body_end]
        pos = body_end + (size & 1)  # chunks are word-aligned
    return chunks


def _decode_pcm(raw: bytes, bits: int, path: Path) -> np.ndarray:
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8)
        b = b[: (b.size // 3) * 3].reshape(-1, 3).astype(np.int64)
        vals = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        return vals.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise ParseError(f"{path}: unsupported PCM sample width of {bits} bits")


def read_wav(path: str | Path) -> AudioTrack:
    """Decode a WAV file into a mono AudioTrack.

    Supports little-endian integer PCM at 8, 16, 24, and 32 bits plus
    32-bit IEEE float; multi-channel material is mixed down with
    `to_mono`. Any other encoding raises ParseError naming the format
    tag.
    """
    path = Path(path)
    data = path.read_bytes()
    chunks = _read_chunks(data, path)
    if b"fmt " not in chunks:
        raise ParseError(f"{path}: missing fmt chunk")
    if b"data" not in chunks:
        raise ParseError(f"{path}: missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise ParseError(f"{path}: fmt chunk too short ({len(fmt)} bytes)")
    tag, n_channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise ParseError(f"{path}: extensible fmt chunk too short")
        (tag,) = struct.unpack_from("<H", fmt, 24)  # first two GUID bytes
    if tag not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        name = _FORMAT_TAG_NAMES.get(tag)
        extra = f" ({name})" if name else ""
        raise ParseError(f"{path}: unsupported WAV encoding, format tag 0x{tag:04X}{extra}")
    if n_channels < 1:
        raise ParseError(f"{path}: fmt chunk declares {n_channels} channels")

    raw = chunks[b"data"]
    if block_align:
        usable = (len(raw) // block_align) * block_align
        if usable != len(raw):
            logger.warning("%s: data chunk has %d trailing bytes, ignored", path, len(raw) - usable)
            raw = raw[:usable]

    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise ParseError(f"{path}: float WAV must be 32-bit, got {bits}")
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        flat = _decode_pcm(raw, bits, path)

    if n_channels > 1:
        flat = flat[: (flat.size // n_channels) * n_channels]
        frames = flat.reshape(-1, n_channels)
        return to_mono([frames[:, c] for c in range(n_channels)], rate)
    return AudioTrack(flat, rate, source_channels=1)


def write_wav(path: str | Path, track: AudioTrack) -> None:
    """Write a track as 16-bit PCM WAV."""
    ints = np.round(np.clip(track.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(track.sample_rate_hz)
        fh.writeframes(ints.tobytes())
