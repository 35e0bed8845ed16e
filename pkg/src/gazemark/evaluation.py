"""Label-quality metrics and rectification accounting.

Confusion matrices compare predicted frame labels against ground truth;
frames unlabeled on either side are excluded from the matrix and
counted separately. The 7-class view merges zones 1+2 and 5+6, which
sit closest together in the recording geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import UNLABELED, FrameLabels, MarkerTimeline, emit_frame_labels
from .errors import MetricError, StructuralError
from .synth import GroundTruth

# zone merges of the 7-class view; each merged class keeps the lower
# zone number as its integer representative
ZONE_MERGES_7 = {2: 1, 6: 5}
MERGED_CLASS_NAMES = {1: "1+2", 5: "5+6"}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix: rows are true classes, columns predicted."""

    classes: tuple[int, ...]
    counts: np.ndarray
    excluded: int

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if counts.shape != (k, k):
            raise ValueError(f"counts shape {counts.shape} does not match {k} classes")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        if len(set(self.classes)) != k:
            raise ValueError("classes must be unique")
        if self.excluded < 0:
            raise ValueError("excluded count must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index_of(self, cls: int) -> int:
        return self.classes.index(cls)


def confusion(truth: FrameLabels, predicted: FrameLabels) -> ConfusionMatrix:
    """Count frame agreements between two label tracks.

    Only frames labeled in both tracks enter the matrix; the rest go to
    `excluded`. Classes are the sorted union of zone values seen on the
    counted frames.
    """
    if truth.n_frames != predicted.n_frames:
        raise StructuralError(
            f"frame count mismatch: truth {truth.n_frames}, predicted {predicted.n_frames}"
        )
    both = (truth.zones != UNLABELED) & (predicted.zones != UNLABELED)
    excluded = int(np.count_nonzero(~both))
    t = truth.zones[both].astype(np.int64)
    p = predicted.zones[both].astype(np.int64)
    classes = tuple(sorted(set(t.tolist()) | set(p.tolist())))
    k = len(classes)
    counts = np.zeros((k, k), dtype=np.int64)
    if k:
        index = {c: i for i, c in enumerate(classes)}
        ti = np.array([index[v] for v in t.tolist()], dtype=np.int64)
        pi = np.array([index[v] for v in p.tolist()], dtype=np.int64)
        np.add.at(counts, (ti, pi), 1)
    return ConfusionMatrix(classes=classes, counts=counts, excluded=excluded)


def accuracy(matrix: ConfusionMatrix) -> float:
    """Percent of counted frames on the diagonal."""
    if matrix.total == 0:
        raise MetricError("accuracy undefined: confusion matrix is empty")
    return float(np.trace(matrix.counts)) / matrix.total * 100.0


def macro_f1(matrix: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1; absent precision/recall count as 0."""
    if matrix.total == 0:
        raise MetricError("macro F1 undefined: confusion matrix is empty")
    counts = matrix.counts
    f1s = []
    for i in range(len(matrix.classes)):
        tp = float(counts[i, i])
        col = float(counts[:, i].sum())
        row = float(counts[i, :].sum())
        precision = tp / col if col > 0 else 0.0
        recall = tp / row if row > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s.append(f1)
    return float(np.mean(f1s))


def merge_zones_7(labels: FrameLabels) -> FrameLabels:
    """Collapse zones 2 into 1 and 6 into 5; everything else unchanged."""
    zones = labels.zones.copy()
    for src, dst in ZONE_MERGES_7.items():
        zones[zones == src] = dst
    return FrameLabels(zones, labels.provenance.copy(), labels.fps, labels.n_frames)


def class_display_name(cls: int, merged: bool) -> str:
    if merged and cls in MERGED_CLASS_NAMES:
        return MERGED_CLASS_NAMES[cls]
    return str(cls)


def format_confusion(matrix: ConfusionMatrix, merged: bool = False) -> str:
    """Human-readable table with per-class names and the headline metrics."""
    names = [class_display_name(c, merged) for c in matrix.classes]
    width = max([5] + [len(n) for n in names])
    header = "true\\pred".rjust(10) + "".join(n.rjust(width + 2) for n in names)
    lines = [header]
    for i, name in enumerate(names):
        row = name.rjust(10) + "".join(
            str(int(v)).rjust(width + 2) for v in matrix.counts[i]
        )
        lines.append(row)
    lines.append(f"counted frames: {matrix.total}   excluded (unlabeled) frames: {matrix.excluded}")
    if matrix.total:
        lines.append(f"accuracy: {accuracy(matrix):.2f}%   macro F1: {macro_f1(matrix):.4f}")
    return "\n".join(lines)


@dataclass
class RecoveryReport:
    """How much of the transcript damage rectification repaired."""

    missed_zones: tuple[int, ...]
    recovered_zones: tuple[int, ...]
    recovered_correct: tuple[int, ...]
    recovered_incorrect: tuple[int, ...]
    unresolved_zones: tuple[int, ...]
    frames_gained: int

    def to_dict(self) -> dict:
        return {
            "missed_zones": list(self.missed_zones),
            "recovered_zones": list(self.recovered_zones),
            "recovered_correct": list(self.recovered_correct),
            "recovered_incorrect": list(self.recovered_incorrect),
            "unresolved_zones": list(self.unresolved_zones),
            "frames_gained": self.frames_gained,
        }


MIN_RECOVERY_OVERLAP = 0.5


def recovery_report(
    aligned: MarkerTimeline,
    rectified: MarkerTimeline,
    truth: GroundTruth,
) -> RecoveryReport:
    """Score rectification against ground truth.

    A zone counts as missed when the true timeline has it but alignment
    does not; as recovered when rectification supplies it; as correctly
    recovered when the rectified interval covers at least half of the
    true utterance interval. frames_gained compares labeled-frame
    counts of the two timelines emitted with the ground-truth geometry.
    """
    true_zones = {d.zone: d for d in truth.timeline.detections}
    aligned_zones = set(aligned.zones())
    rect_by_zone = {d.zone: d for d in rectified.detections}

    missed = tuple(z for z in sorted(true_zones) if z not in aligned_zones)
    recovered = tuple(z for z in missed if z in rect_by_zone)
    correct = []
    incorrect = []
    for z in recovered:
        t = true_zones[z]
        r = rect_by_zone[z]
        overlap = max(0.0, min(t.end_s, r.end_s) - max(t.start_s, r.start_s))
        true_len = t.end_s - t.start_s
        if true_len > 0 and overlap / true_len >= MIN_RECOVERY_OVERLAP:
            correct.append(z)
        else:
            incorrect.append(z)
    unresolved = tuple(z for z in missed if z not in rect_by_zone)

    rect_labels = emit_frame_labels(rectified, truth.fps, truth.n_frames, truth.offset_frames)
    align_labels = emit_frame_labels(aligned, truth.fps, truth.n_frames, truth.offset_frames)
    frames_gained = rect_labels.labeled_count - align_labels.labeled_count
    return RecoveryReport(
        missed_zones=missed,
        recovered_zones=recovered,
        recovered_correct=tuple(correct),
        recovered_incorrect=tuple(incorrect),
        unresolved_zones=unresolved,
        frames_gained=frames_gained,
    )
