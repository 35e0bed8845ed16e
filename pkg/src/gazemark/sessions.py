"""Dataset manifests and subject-level partitioning.

A dataset is a JSON manifest listing recording sessions; each session
names its subject, audio file, and video geometry. Splitting happens at
the subject level so no person appears in two partitions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, StructuralError

logger = logging.getLogger(__name__)

PARTITIONS = ("train", "val", "test")


@dataclass(frozen=True)
class SessionManifest:
    """Metadata of one recording session."""

    session_id: str
    subject_id: str
    audio_path: Path
    fps: float
    n_frames: int
    lighting_tag: str = ""
    wears_glasses: bool = False
    transcript_path: Path | None = None

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValueError("session_id is empty")
        if not self.subject_id:
            raise ValueError("subject_id is empty")
        if self.fps <= 0:
            raise ValueError(f"session {self.session_id}: fps must be positive, got {self.fps}")
        if self.n_frames < 1:
            raise ValueError(
                f"session {self.session_id}: n_frames must be >= 1, got {self.n_frames}"
            )
        object.__setattr__(self, "audio_path", Path(self.audio_path))
        if self.transcript_path is not None:
            object.__setattr__(self, "transcript_path", Path(self.transcript_path))


_REQUIRED_FIELDS = ("session_id", "subject_id", "audio_path", "fps", "n_frames")


def _session_from_obj(obj: object, index: int, base_dir: Path, where: str) -> SessionManifest:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: session {index} is not an object")
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise ParseError(f"{where}: session {index} missing field {key!r}")
    audio = base_dir / str(obj["audio_path"])
    transcript = obj.get("transcript_path")
    try:
        return SessionManifest(
            session_id=str(obj["session_id"]),
            subject_id=str(obj["subject_id"]),
            audio_path=audio,
            fps=float(obj["fps"]),
            n_frames=int(obj["n_frames"]),
            lighting_tag=str(obj.get("lighting_tag", "")),
            wears_glasses=bool(obj.get("wears_glasses", False)),
            transcript_path=base_dir / str(transcript) if transcript else None,
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: session {index} invalid: {exc}") from exc


def load_dataset(path: str | Path) -> list[SessionManifest]:
    """Read a dataset manifest; relative paths resolve against its directory.

    Referenced audio files are not opened here; their existence is
    checked when a session is actually processed.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"{path}: cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or "sessions" not in obj:
        raise ParseError(f"{path}: manifest must be an object with a 'sessions' list")
    if not isinstance(obj["sessions"], list):
        raise ParseError(f"{path}: 'sessions' must be a list")
    base_dir = path.parent
    sessions = [
        _session_from_obj(entry, i, base_dir, str(path)) for i, entry in enumerate(obj["sessions"])
    ]
    seen: set[str] = set()
    for s in sessions:
        if s.session_id in seen:
            raise StructuralError(f"{path}: duplicate session_id {s.session_id!r}")
        seen.add(s.session_id)
    return sessions


def manifest_to_obj(sessions: Sequence[SessionManifest], base_dir: Path | None = None) -> dict:
    """Render sessions as a manifest object with paths relative to base_dir."""

    def _rel(p: Path | None) -> str | None:
        if p is None:
            return None
        if base_dir is not None:
            try:
                return Path(p).relative_to(base_dir).as_posix()
            except ValueError:
                pass
        return Path(p).as_posix()

    entries = []
    for s in sessions:
        entry: dict = {
            "session_id": s.session_id,
            "subject_id": s.subject_id,
            "audio_path": _rel(s.audio_path),
            "fps": s.fps,
            "n_frames": s.n_frames,
            "lighting_tag": s.lighting_tag,
            "wears_glasses": s.wears_glasses,
        }
        if s.transcript_path is not None:
            entry["transcript_path"] = _rel(s.transcript_path)
        entries.append(entry)
    return {"sessions": entries}


def save_manifest(sessions: Sequence[SessionManifest], path: str | Path) -> None:
    path = Path(path)
    path.write_text(
        json.dumps(manifest_to_obj(sessions, base_dir=path.parent), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


@dataclass(frozen=True)
class DatasetSplit:
    """Assignment of every subject to exactly one partition."""

    assignments: dict[str, str]

    def __post_init__(self) -> None:
        for subject, part in self.assignments.items():
            if part not in PARTITIONS:
                raise ValueError(f"subject {subject!r} assigned to unknown partition {part!r}")

    def subjects_in(self, partition: str) -> tuple[str, ...]:
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        return tuple(sorted(s for s, p in self.assignments.items() if p == partition))

    def counts(self) -> tuple[int, int, int]:
        return tuple(len(self.subjects_in(p)) for p in PARTITIONS)  # type: ignore[return-value]

    def sessions_in(
        self, sessions: Sequence[SessionManifest], partition: str
    ) -> list[SessionManifest]:
        wanted = set(self.subjects_in(partition))
        return [s for s in sessions if s.subject_id in wanted]


def split_subjects(
    sessions: Sequence[SessionManifest],
    fractions: tuple[float, float, float] = (0.60, 0.245, 0.155),
    seed: int = 42,
) -> DatasetSplit:
    """Partition subjects into train/val/test by seeded shuffle.

    Fractions are (train, val, test) and must be non-negative and sum
    to 1. Subject order is a seeded permutation of the sorted unique
    subject ids; the val and test counts are rounded from the fractions
    and train absorbs the remainder, so for 338 subjects at the default
    fractions the counts come out (203, 83, 52).
    """
    if len(fractions) != 3:
        raise ValueError(f"fractions must have 3 entries, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")

    subjects = sorted({s.subject_id for s in sessions})
    n = len(subjects)
    nonzero = sum(1 for f in fractions if f > 0)
    if n < nonzero:
        raise ValueError(f"{n} subject(s) cannot fill {nonzero} nonzero partitions")

    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(n)]

    n_val = round(n * fractions[1])
    n_test = round(n * fractions[2])
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ValueError(
            f"rounded val/test counts ({n_val}, {n_test}) exceed {n} subjects"
        )

    assignments: dict[str, str] = {}
    for i, subject in enumerate(order):
        if i < n_train:
            assignments[subject] = "train"
        elif i < n_train + n_val:
            assignments[subject] = "val"
        else:
            assignments[subject] = "test"
    return DatasetSplit(assignments)


def save_split(split: DatasetSplit, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(split.assignments, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_split(path: str | Path) -> DatasetSplit:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: split file must map subject ids to partitions")
    try:
        return DatasetSplit({str(k): str(v) for k, v in obj.items()})
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
