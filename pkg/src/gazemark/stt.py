"""Transcription boundary: transcript model, keyword table, and backends.

The pipeline never talks to a speech recognizer directly. It consumes a
`Transcript` (timed word tokens with confidences) produced by one of
three interchangeable backends:

* external-command: spawns a configured program that receives the WAV
  path as its final argument and prints transcript JSON on stdout;
* sidecar-file: reads a transcript JSON file stored next to the audio;
* tone-spotter: detects voice-band tone bursts in synthetic audio and
  emits the digit words in ascending order, for offline testing.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .audio import AudioTrack, voiced_segments
from .errors import BackendError, ParseError

logger = logging.getLogger(__name__)

DIGIT_WORDS = ("one", "two", "three", "four", "five", "six", "seven", "eight", "nine")

# Common recognizer confusions for the digit words. Matching through an
# alias costs a fixed confidence penalty.
DEFAULT_ALIASES: dict[str, tuple[str, ...]] = {
    "one": ("won",),
    "two": ("to", "too"),
    "three": ("tree",),
    "four": ("for", "fore"),
    "eight": ("ate",),
}

ALIAS_CONFIDENCE_FACTOR = 0.9


@dataclass(frozen=True)
class TranscriptToken:
    """One recognized word with its time span and confidence."""

    text: str
    start_s: float
    end_s: float
    confidence: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "text", self.text.lower())
        if not self.text:
            raise ValueError("token text is empty")
        if self.start_s < 0:
            raise ValueError(f"token {self.text!r} has negative start {self.start_s}")
        if self.end_s < self.start_s:
            raise ValueError(
                f"token {self.text!r} ends before it starts ({self.start_s} > {self.end_s})"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"token {self.text!r} confidence {self.confidence} outside [0, 1]")


@dataclass
class Transcript:
    """Tokens of one session, kept sorted by start time."""

    tokens: list[TranscriptToken]
    source_id: str = ""

    def __post_init__(self) -> None:
        self.tokens = sorted(self.tokens, key=lambda t: (t.start_s, t.end_s))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class KeywordSet:
    """Zone keywords: index i of `keywords` marks zone i + 1."""

    keywords: tuple[str, ...] = DIGIT_WORDS
    aliases: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_ALIASES))

    def __post_init__(self) -> None:
        if len(set(self.keywords)) != len(self.keywords):
            raise ValueError("keywords must be unique")
        for canon, alts in self.aliases.items():
            if canon not in self.keywords:
                raise ValueError(f"alias entry {canon!r} is not a keyword")
            for alt in alts:
                if alt in self.keywords:
                    raise ValueError(f"alias {alt!r} collides with a keyword")

    @property
    def n_zones(self) -> int:
        return len(self.keywords)

    def keyword_for_zone(self, zone: int) -> str:
        if not (1 <= zone <= self.n_zones):
            raise ValueError(f"zone {zone} outside 1..{self.n_zones}")
        return self.keywords[zone - 1]

    def matches(self, zone: int, text: str) -> tuple[bool, bool]:
        """Return (matched, via_alias) for a token text against a zone."""
        canon = self.keyword_for_zone(zone)
        if text == canon:
            return True, False
        if text in self.aliases.get(canon, ()):
            return True, True
        return False, False


# --- transcript JSON --------------------------------------------------------


def _token_from_obj(obj: object, index: int, where: str) -> TranscriptToken:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: token {index} is not an object")
    for key in ("text", "start_s", "end_s", "confidence"):
        if key not in obj:
            raise ParseError(f"{where}: token {index} missing field {key!r}")
    values: dict[str, object] = {}
    for key, conv in (("text", str), ("start_s", float), ("end_s", float), ("confidence", float)):
        try:
            values[key] = conv(obj[key])  # type: ignore[operator]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: token {index} field {key!r} invalid: {exc}") from exc
    try:
        return TranscriptToken(**values)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ParseError(f"{where}: token {index} invalid: {exc}") from exc


def parse_transcript(obj: object, where: str = "transcript") -> Transcript:
    """Build a Transcript from decoded JSON, validating the schema."""
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: top level must be an object")
    if "source_id" not in obj or "tokens" not in obj:
        missing = [k for k in ("source_id", "tokens") if k not in obj]
        raise ParseError(f"{where}: missing field(s) {missing}")
    if not isinstance(obj["tokens"], list):
        raise ParseError(f"{where}: 'tokens' must be a list")
    tokens = [_token_from_obj(t, i, where) for i, t in enumerate(obj["tokens"])]
    starts = [t.start_s for t in tokens]
    if starts != sorted(starts):
        logger.warning("%s: tokens were not sorted by start time, sorting", where)
    return Transcript(tokens=tokens, source_id=str(obj["source_id"]))


def load_transcript(path: str | Path) -> Transcript:
    """Read and validate a transcript JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read transcript: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_transcript(obj, where=str(path))


def transcript_to_obj(transcript: Transcript) -> dict:
    return {
        "source_id": transcript.source_id,
        "tokens": [
            {"text": t.text, "start_s": t.start_s, "end_s": t.end_s, "confidence": t.confidence}
            for t in transcript.tokens
        ],
    }


def save_transcript(transcript: Transcript, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(transcript_to_obj(transcript), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# --- backends ---------------------------------------------------------------


@dataclass(frozen=True)
class ExternalCommandBackend:
    """Spawn a recognizer process.

    The configured command gets the WAV path appended as its final
    argument and must print transcript JSON on stdout and exit 0.
    Nonzero exit, timeout, or malformed output raise BackendError with
    the captured diagnostics.
    """

    command: tuple[str, ...]
    timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("external command is empty")

    def transcribe(
        self,
        track: AudioTrack,
        audio_path: Path | None,
        transcript_path: Path | None,
    ) -> Transcript:
        if audio_path is None:
            raise BackendError("external-command backend needs the audio file path")
        argv = [*self.command, str(audio_path)]
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout_s, check=False
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendError(f"command {argv[0]!r} timed out after {self.timeout_s} s") from exc
        except OSError as exc:
            raise BackendError(f"cannot run {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-5:]
            raise BackendError(
                f"command {argv[0]!r} exited {proc.returncode}; stderr: " + " | ".join(tail)
            )
        try:
            obj = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise BackendError(f"command {argv[0]!r} printed invalid JSON: {exc.msg}") from exc
        transcript = parse_transcript(obj, where=f"output of {argv[0]!r}")
        if not transcript.source_id:
            transcript.source_id = Path(self.command[0]).name
        return transcript


@dataclass(frozen=True)
class SidecarBackend:
    """Read a transcript file stored alongside the audio.

    Uses the explicit transcript path when one is supplied, otherwise
    looks for `<audio stem>.transcript.json` next to the WAV file.
    """

    def transcribe(
        self,
        track: AudioTrack,
        audio_path: Path | None,
        transcript_path: Path | None,
    ) -> Transcript:
        path = transcript_path
        if path is None:
            if audio_path is None:
                raise BackendError("sidecar backend needs a transcript or audio path")
            path = audio_path.with_suffix(".transcript.json")
        if not Path(path).exists():
            raise BackendError(f"sidecar transcript not found: {path}")
        return load_transcript(path)


@dataclass(frozen=True)
class ToneSpotterBackend:
    """Detect voice-band tone bursts and name them with ascending digits.

    Purely signal-driven: the i-th detected burst becomes the word for
    digit i + 1 with confidence 1.0. Silence yields an empty transcript.
    Bursts beyond the ninth are ignored.
    """

    window_s: float = 0.25
    hop_s: float = 0.10
    band: tuple[float, float] = (300.0, 3000.0)
    ratio_threshold: float = 0.5

    def transcribe(
        self,
        track: AudioTrack,
        audio_path: Path | None,
        transcript_path: Path | None,
    ) -> Transcript:
        segments = voiced_segments(
            track,
            window_s=self.window_s,
            hop_s=self.hop_s,
            band=self.band,
            ratio_threshold=self.ratio_threshold,
        )
        if len(segments) > len(DIGIT_WORDS):
            logger.warning(
                "tone-spotter found %d bursts, keeping the first %d",
                len(segments),
                len(DIGIT_WORDS),
            )
        tokens = [
            TranscriptToken(DIGIT_WORDS[i], seg.start_s, seg.end_s, 1.0)
            for i, seg in enumerate(segments[: len(DIGIT_WORDS)])
        ]
        return Transcript(tokens=tokens, source_id="tone-spotter")


Backend = ExternalCommandBackend | SidecarBackend | ToneSpotterBackend


def run_backend(
    track: AudioTrack,
    backend: Backend,
    audio_path: str | Path | None = None,
    transcript_path: str | Path | None = None,
) -> Transcript:
    """Run a transcription backend and sanity-check its output."""
    transcript = backend.transcribe(
        track,
        Path(audio_path) if audio_path is not None else None,
        Path(transcript_path) if transcript_path is not None else None,
    )
    beyond = [t.text for t in transcript.tokens if t.end_s > track.duration_s + 1e-6]
    if beyond:
        logger.warning(
            "transcript %s has %d token(s) past the audio end (%.3f s): %s",
            transcript.source_id,
            len(beyond),
            track.duration_s,
            ", ".join(beyond[:5]),
        )
    return transcript
