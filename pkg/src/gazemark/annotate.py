"""Marker alignment and frame labelling.

Sessions are recorded with the participant speaking the zone keywords in
ascending order while looking at each zone. This module turns a
transcript into a `MarkerTimeline` (one detection per spoken keyword),
patches transcriber misses from the audio itself, and expands the
timeline into per-frame zone labels.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioTrack, voiced_segments
from .errors import ParseError
from .stt import ALIAS_CONFIDENCE_FACTOR, KeywordSet, Transcript

logger = logging.getLogger(__name__)

UNLABELED = 0

PROVENANCE_NAMES = ("unlabeled", "stt", "rectified", "refined", "propagated")
PROV_UNLABELED, PROV_STT, PROV_RECTIFIED, PROV_REFINED, PROV_PROPAGATED = range(5)
_PROV_CODES = {name: code for code, name in enumerate(PROVENANCE_NAMES)}

_DETECTION_PROVENANCES = ("stt", "rectified")


@dataclass(frozen=True)
class MarkerDetection:
    """One spoken-keyword event anchored in session time."""

    zone: int
    start_s: float
    end_s: float
    provenance: str
    confidence: float

    def __post_init__(self) -> None:
        if self.zone < 1:
            raise ValueError(f"zone must be >= 1, got {self.zone}")
        if self.end_s < self.start_s:
            raise ValueError(f"detection for zone {self.zone} ends before it starts")
        if self.provenance not in _DETECTION_PROVENANCES:
            raise ValueError(
                f"detection provenance must be one of {_DETECTION_PROVENANCES}, got {self.provenance!r}"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"detection confidence {self.confidence} outside [0, 1]")


@dataclass
class MarkerTimeline:
    """Detections of one session, strictly ordered in zone and time.

    Zones absent from `detections` are the session's gaps; the expected
    zone count comes from `n_zones`.
    """

    detections: list[MarkerDetection]
    session_id: str = ""
    n_zones: int = 9

    def __post_init__(self) -> None:
        if self.n_zones < 1:
            raise ValueError(f"n_zones must be >= 1, got {self.n_zones}")
        prev: MarkerDetection | None = None
        for det in self.detections:
            if det.zone > self.n_zones:
                raise ValueError(f"zone {det.zone} exceeds n_zones {self.n_zones}")
            if prev is not None:
                if det.zone <= prev.zone:
                    raise ValueError(
                        f"zones must strictly increase, got {prev.zone} then {det.zone}"
                    )
                if det.start_s < prev.end_s:
                    raise ValueError(
                        f"detections overlap: zone {prev.zone} ends {prev.end_s:.3f}, "
                        f"zone {det.zone} starts {det.start_s:.3f}"
                    )
            prev = det

    def zones(self) -> tuple[int, ...]:
        return tuple(d.zone for d in self.detections)

    def missing_zones(self) -> tuple[int, ...]:
        present = set(self.zones())
        return tuple(z for z in range(1, self.n_zones + 1) if z not in present)

    def detection_for(self, zone: int) -> MarkerDetection | None:
        for det in self.detections:
            if det.zone == zone:
                return det
        return None


@dataclass
class FrameLabels:
    """Per-frame zone labels; zone 0 means unlabeled."""

    zones: np.ndarray
    provenance: np.ndarray
    fps: float
    n_frames: int

    def __post_init__(self) -> None:
        zones = np.asarray(self.zones, dtype=np.int16)
        prov = np.asarray(self.provenance, dtype=np.uint8)
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if zones.shape != (self.n_frames,) or prov.shape != (self.n_frames,):
            raise ValueError(
                f"label arrays must have shape ({self.n_frames},), "
                f"got {zones.shape} and {prov.shape}"
            )
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if np.any(zones < 0):
            raise ValueError("zone values must be >= 0")
        if np.any(prov >= len(PROVENANCE_NAMES)):
            raise ValueError("unknown provenance code")
        if np.any((zones == UNLABELED) != (prov == PROV_UNLABELED)):
            raise ValueError("provenance 'unlabeled' must coincide exactly with zone 0")
        self.zones = zones
        self.provenance = prov

    @classmethod
    def empty(cls, fps: float, n_frames: int) -> "FrameLabels":
        return cls(
            zones=np.zeros(n_frames, dtype=np.int16),
            provenance=np.zeros(n_frames, dtype=np.uint8),
            fps=fps,
            n_frames=n_frames,
        )

    def copy(self) -> "FrameLabels":
        return FrameLabels(self.zones.copy(), self.provenance.copy(), self.fps, self.n_frames)

    @property
    def labeled_count(self) -> int:
        return int(np.count_nonzero(self.zones))


def align_keywords(
    transcript: Transcript,
    keywords: KeywordSet | None = None,
    min_confidence: float = 0.5,
    session_id: str = "",
) -> MarkerTimeline:
    """Greedy ascending scan of the transcript for the zone keywords.

    For each zone in order, the earliest token that matches the zone's
    keyword (or one of its aliases), clears `min_confidence`, and starts
    after the previously selected token's end becomes that zone's
    detection. Alias matches carry a penalized confidence
    (raw * 0.9), and the threshold applies to the penalized value.
    Unmatched zones stay absent from the returned timeline.
    """
    if keywords is None:
        keywords = KeywordSet()
    if not (0.0 <= min_confidence <= 1.0):
        raise ValueError(f"min_confidence must lie in [0, 1], got {min_confidence}")
    detections: list[MarkerDetection] = []
    prev_end = -math.inf
    for zone in range(1, keywords.n_zones + 1):
        chosen: MarkerDetection | None = None
        for token in transcript.tokens:
            if token.start_s <= prev_end:
                continue
            matched, via_alias = keywords.matches(zone, token.text)
            if not matched:
                continue
            conf = token.confidence * ALIAS_CONFIDENCE_FACTOR if via_alias else token.confidence
            if conf < min_confidence:
                continue
            chosen = MarkerDetection(zone, token.start_s, token.end_s, "stt", conf)
            break
        if chosen is not None:
            detections.append(chosen)
            prev_end = chosen.end_s
    timeline = MarkerTimeline(detections, session_id=session_id, n_zones=keywords.n_zones)
    missing = timeline.missing_zones()
    if missing:
        logger.info("session %s: zones %s not found in transcript", session_id or "?", missing)
    return timeline


@dataclass(frozen=True)
class RectificationParams:
    """Analysis settings for transcript-miss rectification."""

    window_s: float = 0.25
    hop_s: float = 0.10
    band: tuple[float, float] = (300.0, 3000.0)
    ratio_threshold: float = 0.5
    window: str = "hann"


def rectify_gaps(
    timeline: MarkerTimeline,
    track: AudioTrack,
    params: RectificationParams | None = None,
) -> MarkerTimeline:
    """Fill transcript misses from the audio's voice-band activity.

    For every maximal run of consecutive missing zones, the open
    interval between the neighbouring matched detections (or the track
    edges) is searched for voice-band segments. When the number of
    candidate segments equals the number of missing zones in the run,
    they are assigned in temporal order with provenance "rectified" and
    confidence 1.0. Otherwise the run stays unresolved and is reported
    via the returned timeline's missing zones.
    """
    if params is None:
        params = RectificationParams()
    missing = timeline.missing_zones()
    if not missing:
        return timeline
    segments = voiced_segments(
        track,
        window_s=params.window_s,
        hop_s=params.hop_s,
        band=params.band,
        ratio_threshold=params.ratio_threshold,
        window=params.window,
    )

    # group the missing zones into runs of consecutive zone numbers
    runs: list[list[int]] = []
    for z in missing:
        if runs and z == runs[-1][-1] + 1:
            runs[-1].append(z)
        else:
            runs.append([z])

    new_detections = list(timeline.detections)
    for run in runs:
        before = [d for d in timeline.detections if d.zone < run[0]]
        after = [d for d in timeline.detections if d.zone > run[-1]]
        lo = before[-1].end_s if before else 0.0
        hi = after[0].start_s if after else track.duration_s
        candidates = [s for s in segments if s.start_s > lo and s.end_s < hi]
        if len(candidates) != len(run):
            logger.info(
                "session %s: gap zones %s unresolved (%d candidate segment(s) in "
                "(%.3f, %.3f) s for %d missing zone(s))",
                timeline.session_id or "?",
                run,
                len(candidates),
                lo,
                hi,
                len(run),
            )
            continue
        for zone, seg in zip(run, candidates):
            new_detections.append(
                MarkerDetection(zone, seg.start_s, seg.end_s, "rectified", 1.0)
            )
    new_detections.sort(key=lambda d: d.zone)
    return MarkerTimeline(
        new_detections, session_id=timeline.session_id, n_zones=timeline.n_zones
    )


def emit_frame_labels(
    timeline: MarkerTimeline,
    fps: float,
    n_frames: int,
    offset_frames: int = 10,
) -> FrameLabels:
    """Expand a timeline into per-frame labels.

    Each detection labels the frames from floor(start_s * fps) -
    offset_frames through ceil(end_s * fps) + offset_frames, clamped to
    the frame range. Where the expanded ranges of consecutive
    detections overlap, the overlap is split at its midpoint and the
    earlier zone keeps the first half.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if offset_frames < 0:
        raise ValueError(f"offset_frames must be >= 0, got {offset_frames}")

    ranges: list[list[int]] = []  # [zone, lo, hi, prov_code]
    for det in timeline.detections:
        raw_lo = math.floor(det.start_s * fps)
        raw_hi = math.ceil(det.end_s * fps)
        if raw_hi >= n_frames or raw_lo < 0:
            logger.warning(
                "session %s: zone %d spans frames %d..%d outside 0..%d, clamping",
                timeline.session_id or "?",
                det.zone,
                raw_lo,
                raw_hi,
                n_frames - 1,
            )
        lo = max(0, raw_lo - offset_frames)
        hi = min(n_frames - 1, raw_hi + offset_frames)
        if lo > hi:
            continue
        ranges.append([det.zone, lo, hi, _PROV_CODES[det.provenance]])

    for i in range(1, len(ranges)):
        prev, cur = ranges[i - 1], ranges[i]
        if cur[1] <= prev[2]:  # expanded ranges overlap
            split = (cur[1] + prev[2]) // 2  # earlier zone keeps frames <= midpoint
            prev[2] = split
            cur[1] = split + 1

    labels = FrameLabels.empty(fps, n_frames)
    zones = labels.zones
    prov = labels.provenance
    for zone, lo, hi, code in ranges:
        if lo > hi:
            continue
        zones[lo : hi + 1] = zone
        prov[lo : hi + 1] = code
    return FrameLabels(zones, prov, fps, n_frames)


# --- file formats -----------------------------------------------------------

LABELS_CSV_HEADER = ("frame", "zone", "provenance")


def labels_to_csv_text(labels: FrameLabels) -> str:
    """Render labels in the interchange CSV format (deterministic bytes)."""
    lines = [",".join(LABELS_CSV_HEADER)]
    for i in range(labels.n_frames):
        zone = labels.zones[i]
        zone_text = "" if zone == UNLABELED else str(int(zone))
        lines.append(f"{i},{zone_text},{PROVENANCE_NAMES[labels.provenance[i]]}")
    return "\n".join(lines) + "\n"


def write_labels_csv(labels: FrameLabels, path: str | Path) -> None:
    Path(path).write_text(labels_to_csv_text(labels), encoding="utf-8", newline="\n")


def read_labels_csv(path: str | Path, fps: float = 1.0) -> FrameLabels:
    """Read labels written by `write_labels_csv`.

    The CSV carries no frame rate, so callers that need real timing must
    pass `fps` from the session manifest.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty label file") from None
        if tuple(header) != LABELS_CSV_HEADER:
            raise ParseError(f"{path}: bad header {header!r}, expected {list(LABELS_CSV_HEADER)}")
        zones: list[int] = []
        prov: list[int] = []
        for row_no, row in enumerate(reader):
            if len(row) != 3:
                raise ParseError(f"{path}: row {row_no} has {len(row)} fields, expected 3")
            frame_text, zone_text, prov_name = row
            try:
                frame = int(frame_text)
            except ValueError:
                raise ParseError(f"{path}: row {row_no} has non-integer frame {frame_text!r}") from None
            if frame != row_no:
                raise ParseError(f"{path}: row {row_no} carries frame index {frame}, expected {row_no}")
            if prov_name not in _PROV_CODES:
                raise ParseError(f"{path}: row {row_no} has unknown provenance {prov_name!r}")
            zone = UNLABELED if zone_text == "" else int(zone_text)
            zones.append(zone)
            prov.append(_PROV_CODES[prov_name])
    if not zones:
        raise ParseError(f"{path}: label file has no frames")
    return FrameLabels(
        np.array(zones, dtype=np.int16), np.array(prov, dtype=np.uint8), fps, len(zones)
    )


def timeline_to_obj(timeline: MarkerTimeline) -> dict:
    return {
        "session_id": timeline.session_id,
        "n_zones": timeline.n_zones,
        "detections": [
            {
                "zone": d.zone,
                "start_s": d.start_s,
                "end_s": d.end_s,
                "provenance": d.provenance,
                "confidence": d.confidence,
            }
            for d in timeline.detections
        ],
    }


def write_timeline_json(timeline: MarkerTimeline, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(timeline_to_obj(timeline), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def read_timeline_json(path: str | Path) -> MarkerTimeline:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or "detections" not in obj:
        raise ParseError(f"{path}: not a timeline dump")
    try:
        detections = [
            MarkerDetection(
                zone=int(d["zone"]),
                start_s=float(d["start_s"]),
                end_s=float(d["end_s"]),
                provenance=str(d["provenance"]),
                confidence=float(d["confidence"]),
            )
            for d in obj["detections"]
        ]
        return MarkerTimeline(
            detections,
            session_id=str(obj.get("session_id", "")),
            n_zones=int(obj.get("n_zones", 9)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid timeline: {exc}") from exc
