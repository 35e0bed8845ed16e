"""Pipeline tuning knobs shared by the CLI subcommands."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ParseError


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the annotate/refine pipeline with its default.

    window_s / hop_s: analysis window size and hop for voice-band scans.
    band_lo_hz / band_hi_hz: the voice band.
    ratio_threshold: minimum in-band energy fraction for a voiced window.
    offset_frames: frames of padding around each detected utterance.
    min_confidence: minimum (alias-penalized) token confidence to match.
    transition_halfwidth: half-width of the re-labelling window around
        each zone boundary.
    k: cluster count for refinement, one per zone.
    seed: RNG seed for clustering.
    """

    window_s: float = 0.25
    hop_s: float = 0.10
    band_lo_hz: float = 300.0
    band_hi_hz: float = 3000.0
    ratio_threshold: float = 0.5
    offset_frames: int = 10
    min_confidence: float = 0.5
    transition_halfwidth: int = 10
    k: int = 9
    seed: int = 42

    def __post_init__(self) -> None:
        if not (0.0 < self.hop_s <= self.window_s):
            raise ValueError(
                f"need 0 < hop_s <= window_s, got hop {self.hop_s}, window {self.window_s}"
            )
        if not (0.0 <= self.band_lo_hz < self.band_hi_hz):
            raise ValueError(f"bad band [{self.band_lo_hz}, {self.band_hi_hz}]")
        if not (0.0 <= self.ratio_threshold <= 1.0):
            raise ValueError(f"ratio_threshold must lie in [0, 1], got {self.ratio_threshold}")
        if not (0.0 <= self.min_confidence <= 1.0):
            raise ValueError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")
        if self.offset_frames < 0:
            raise ValueError(f"offset_frames must be >= 0, got {self.offset_frames}")
        if self.transition_halfwidth < 0:
            raise ValueError(f"transition_halfwidth must be >= 0, got {self.transition_halfwidth}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def band(self) -> tuple[float, float]:
        return (self.band_lo_hz, self.band_hi_hz)


_FIELD_NAMES = tuple(f.name for f in fields(PipelineConfig))


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config JSON file; unknown keys are an error."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    unknown = set(obj) - set(_FIELD_NAMES)
    if unknown:
        raise ParseError(f"{path}: unknown config key(s): {sorted(unknown)}")
    try:
        return PipelineConfig(**obj)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid config: {exc}") from exc


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Return a copy with the non-None entries of `overrides` applied."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(updates) - set(_FIELD_NAMES)
    if unknown:
        raise ValueError(f"unknown config field(s): {sorted(unknown)}")
    return replace(config, **updates) if updates else config
