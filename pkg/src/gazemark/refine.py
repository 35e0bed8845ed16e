"""Label refinement around zone transitions.

The offset-based labels from `annotate` are deliberately generous, so
frames near a zone boundary may carry the wrong zone. This module
clusters per-frame appearance embeddings (k-means, one cluster per
zone), maps clusters to zones by majority vote over the existing
labels, and re-labels only the frames inside a window around each
boundary. Blink frames can afterwards borrow the zone of the nearest
preceding non-blink labeled frame.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .annotate import (
    PROV_PROPAGATED,
    PROV_REFINED,
    UNLABELED,
    FrameLabels,
)
from .errors import ParseError, StructuralError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingSet:
    """Per-frame embedding vectors tied to frame indices.

    vectors: (n, dim) float64, all finite.
    frame_indices: (n,) strictly increasing frame numbers.
    """

    vectors: np.ndarray
    frame_indices: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        frames = np.asarray(self.frame_indices, dtype=np.int64)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        if frames.ndim != 1 or frames.size != vectors.shape[0]:
            raise ValueError(
                f"frame_indices shape {frames.shape} does not match {vectors.shape[0]} vectors"
            )
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors contain non-finite values")
        if frames.size and (np.any(frames < 0) or np.any(np.diff(frames) <= 0)):
            raise ValueError("frame_indices must be non-negative and strictly increasing")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "frame_indices", frames)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_vectors(cls, vectors: np.ndarray) -> "EmbeddingSet":
        vectors = np.asarray(vectors, dtype=np.float64)
        return cls(vectors, np.arange(vectors.shape[0], dtype=np.int64))

    def row_for_frame(self, frame: int) -> int | None:
        pos = int(np.searchsorted(self.frame_indices, frame))
        if pos < self.frame_indices.size and self.frame_indices[pos] == frame:
            return pos
        return None


@dataclass(frozen=True)
class ClusterModel:
    """Result of one k-means run."""

    centers: np.ndarray
    k: int
    assignments: np.ndarray
    inertia: float
    n_iter: int
    converged: bool
    inertia_history: tuple[float, ...]


@dataclass(frozen=True)
class BlinkFlags:
    """Per-frame blink indicators."""

    flags: np.ndarray

    def __post_init__(self) -> None:
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 1:
            raise ValueError(f"blink flags must be 1-D, got shape {flags.shape}")
        object.__setattr__(self, "flags", flags)

    @property
    def n_frames(self) -> int:
        return self.flags.size


def kmeans_pp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection.

    First center uniform; each further center drawn with probability
    proportional to the squared distance to the nearest chosen center.
    """
    n = vectors.shape[0]
    centers = np.empty((k, vectors.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = vectors[first]
    d2 = np.sum((vectors - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))  # all points coincide with chosen centers
        centers[j] = vectors[idx]
        d2 = np.minimum(d2, np.sum((vectors - centers[j]) ** 2, axis=1))
    return centers


def _assign(vectors: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum((vectors[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
    return assign, d2


def kmeans(
    embeddings: EmbeddingSet,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
) -> ClusterModel:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Randomness comes entirely from numpy's default generator seeded with
    `seed`, so identical inputs give identical models. Ties in the
    assignment step go to the lowest center index. An empty cluster is
    repaired by seizing the point currently farthest from its own
    center (from a cluster that can spare one); the seized point
    becomes the empty cluster's center on the spot. Iteration stops at
    an assignment fixpoint or after `max_iters` rounds, and the recorded
    inertia history is non-increasing.
    """
    X = embeddings.vectors
    n = X.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in 1..{n} (number of vectors), got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")

    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(X, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    converged = False
    n_iter = 0

    for n_iter in range(1, max_iters + 1):
        new_assign, d2 = _assign(X, centers)
        point_cost = d2[np.arange(n), new_assign]

        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            donors = counts[new_assign] > 1  # do not empty a singleton cluster
            if not np.any(donors):
                break
            costs = np.where(donors, point_cost, -1.0)
            seized = int(np.argmax(costs))
            counts[new_assign[seized]] -= 1
            counts[empty] += 1
            new_assign[seized] = empty
            centers = centers.copy()
            centers[empty] = X[seized]
            point_cost[seized] = 0.0

        history.append(float(point_cost.sum()))
        if np.array_equal(new_assign, assignments):
            converged = True
            break
        assignments = new_assign
        # update step: every cluster is non-empty after repair
        sums = np.zeros((k, X.shape[1]), dtype=np.float64)
        np.add.at(sums, assignments, X)
        centers = sums / np.bincount(assignments, minlength=k)[:, None]

    # one extra assignment pass leaves the returned model self-consistent:
    # assignments are the argmin against the returned centers, and on a
    # converged run this pass reproduces the fixpoint unchanged
    final_assign, d2 = _assign(X, centers)
    inertia = float(d2[np.arange(n), final_assign].sum())
    return ClusterModel(
        centers=centers,
        k=k,
        assignments=final_assign,
        inertia=inertia,
        n_iter=n_iter,
        converged=converged,
        inertia_history=tuple(history),
    )


def map_clusters_to_zones(
    model: ClusterModel,
    labels: FrameLabels,
    embeddings: EmbeddingSet,
) -> dict[int, int]:
    """Majority-vote mapping from cluster index to zone.

    Each cluster claims the zone most frequent among its members'
    current labels (unlabeled frames do not vote). When two clusters
    want the same zone, the cluster with more members claims it first
    and the other falls back to its next-most-frequent unclaimed zone.
    Clusters with no labeled members stay unmapped.
    """
    if embeddings.n != model.assignments.size:
        raise StructuralError(
            f"model was fit on {model.assignments.size} vectors, embeddings carry {embeddings.n}"
        )
    in_range = embeddings.frame_indices < labels.n_frames
    if not np.all(in_range):
        raise StructuralError("embedding frame indices exceed the label range")
    zones_per_vector = labels.zones[embeddings.frame_indices]
    return map_assignments_to_zones(model.assignments, model.k, zones_per_vector)


def map_assignments_to_zones(
    assignments: np.ndarray, k: int, zones_per_vector: np.ndarray
) -> dict[int, int]:
    """Core of `map_clusters_to_zones`, usable with pooled corpora."""
    sizes = np.bincount(assignments, minlength=k)
    prefs: dict[int, list[tuple[int, int]]] = {}
    for c in range(k):
        member_zones = zones_per_vector[assignments == c]
        member_zones = member_zones[member_zones != UNLABELED]
        if member_zones.size == 0:
            prefs[c] = []
            continue
        values, counts = np.unique(member_zones, return_counts=True)
        order = sorted(zip(values.tolist(), counts.tolist()), key=lambda vc: (-vc[1], vc[0]))
        prefs[c] = order

    mapping: dict[int, int] = {}
    claimed: set[int] = set()
    for c in sorted(range(k), key=lambda c: (-int(sizes[c]), c)):
        for zone, _count in prefs[c]:
            if zone not in claimed:
                mapping[c] = int(zone)
                claimed.add(int(zone))
                break
    return mapping


@dataclass
class ReassignmentReport:
    """Outcome counts of one transition-reassignment pass."""

    transition_frames: int = 0
    reassigned: int = 0
    changed_per_zone: dict[int, int] = field(default_factory=dict)
    missing_embedding: int = 0
    unmapped_cluster: int = 0

    @property
    def changed(self) -> int:
        return sum(self.changed_per_zone.values())

    def to_dict(self) -> dict:
        return {
            "transition_frames": self.transition_frames,
            "reassigned": self.reassigned,
            "changed": self.changed,
            "changed_per_zone": {str(z): c for z, c in sorted(self.changed_per_zone.items())},
            "missing_embedding": self.missing_embedding,
            "unmapped_cluster": self.unmapped_cluster,
        }


def transition_frame_indices(labels: FrameLabels, halfwidth: int) -> np.ndarray:
    """Frames within `halfwidth` of a label boundary.

    A boundary sits before frame b whenever the zone value changes
    between frames b-1 and b; the window covers frames b - halfwidth
    through b + halfwidth - 1. halfwidth 0 selects nothing.
    """
    if halfwidth < 0:
        raise ValueError(f"halfwidth must be >= 0, got {halfwidth}")
    if halfwidth == 0:
        return np.empty(0, dtype=np.int64)
    z = labels.zones
    boundaries = np.flatnonzero(z[1:] != z[:-1]) + 1
    mask = np.zeros(labels.n_frames, dtype=bool)
    for b in boundaries:
        mask[max(0, b - halfwidth) : min(labels.n_frames, b + halfwidth)] = True
    return np.flatnonzero(mask)


def reassign_transition_frames(
    labels: FrameLabels,
    embeddings: EmbeddingSet,
    model: ClusterModel,
    cluster_to_zone: dict[int, int],
    transition_halfwidth: int = 10,
) -> tuple[FrameLabels, ReassignmentReport]:
    """Re-label frames near zone boundaries from their embeddings.

    Every frame inside a transition window whose embedding exists and
    whose nearest cluster is mapped receives that cluster's zone with
    provenance "refined". Frames outside transition windows are never
    touched. Frames lacking an embedding or hitting an unmapped cluster
    stay unchanged and are counted in the report.
    """
    report = ReassignmentReport()
    out = labels.copy()
    targets = transition_frame_indices(labels, transition_halfwidth)
    report.transition_frames = int(targets.size)
    if targets.size == 0:
        return out, report

    rows: list[int] = []
    frames: list[int] = []
    for f in targets.tolist():
        row = embeddings.row_for_frame(f)
        if row is None:
            report.missing_embedding += 1
        else:
            rows.append(row)
            frames.append(f)
    if not rows:
        return out, report

    vectors = embeddings.vectors[rows]
    assign, _ = _assign(vectors, model.centers)
    for f, c in zip(frames, assign.tolist()):
        zone = cluster_to_zone.get(int(c))
        if zone is None:
            report.unmapped_cluster += 1
            continue
        old = int(out.zones[f])
        out.zones[f] = zone
        out.provenance[f] = PROV_REFINED
        report.reassigned += 1
        if old != zone:
            report.changed_per_zone[zone] = report.changed_per_zone.get(zone, 0) + 1
    return FrameLabels(out.zones, out.provenance, out.fps, out.n_frames), report


def propagate_over_blinks(labels: FrameLabels, blinks: BlinkFlags) -> FrameLabels:
    """Give blink frames the zone of the nearest preceding non-blink labeled frame.

    Non-blink frames are never modified; blink frames before any
    labeled non-blink frame stay as they are. Propagated frames carry
    provenance "propagated". The operation is idempotent because the
    carried zones come only from non-blink frames.
    """
    if blinks.n_frames != labels.n_frames:
        raise StructuralError(
            f"blink flags cover {blinks.n_frames} frames, labels cover {labels.n_frames}"
        )
    out = labels.copy()
    source = np.flatnonzero((~blinks.flags) & (labels.zones != UNLABELED))
    blink_idx = np.flatnonzero(blinks.flags)
    if source.size == 0 or blink_idx.size == 0:
        return out
    pos = np.searchsorted(source, blink_idx, side="right") - 1
    has_source = pos >= 0
    targets = blink_idx[has_source]
    donors = source[pos[has_source]]
    out.zones[targets] = labels.zones[donors]
    out.provenance[targets] = PROV_PROPAGATED
    return FrameLabels(out.zones, out.provenance, out.fps, out.n_frames)


# --- embedding binary format ------------------------------------------------
#
# Header: four little-endian uint32 values (magic, version, n, dim) followed
# by n*dim little-endian float32 payload. Frame indices live in a sidecar CSV
# at <path>.frames.csv so the payload stays a plain dense matrix.

EMBEDDING_MAGIC = int.from_bytes(b"FEMB", "little")
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<IIII")


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".frames.csv")


def save_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    path = Path(path)
    payload = embeddings.vectors.astype("<f4").tobytes()
    path.write_bytes(_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, embeddings.n, embeddings.dim) + payload)
    lines = ["frame"] + [str(int(f)) for f in embeddings.frame_indices]
    _sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path: str | Path) -> EmbeddingSet:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: too short for an embedding header")
    magic, version, n, dim = _HEADER.unpack_from(data, 0)
    if magic != EMBEDDING_MAGIC:
        raise ParseError(f"{path}: bad magic 0x{magic:08X}")
    if version != EMBEDDING_VERSION:
        raise ParseError(f"{path}: unsupported embedding version {version}")
    expected = _HEADER.size + n * dim * 4
    if len(data) != expected:
        raise ParseError(f"{path}: payload is {len(data) - _HEADER.size} bytes, expected {n * dim * 4}")
    vectors = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(n, dim)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise ParseError(f"{path}: missing frame-index sidecar {sidecar.name}")
    lines = sidecar.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "frame":
        raise ParseError(f"{sidecar}: bad sidecar header")
    try:
        frames = np.array([int(line) for line in lines[1:] if line], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{sidecar}: non-integer frame index: {exc}") from exc
    if frames.size != n:
        raise ParseError(f"{sidecar}: {frames.size} frame indices for {n} vectors")
    return EmbeddingSet(vectors, frames)


# --- embedding providers ----------------------------------------------------

DEFAULT_EMBED_SIZE = 16
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
_TRAILING_DIGITS = re.compile(r"(\d+)$")


def image_embedding(image, size: int = DEFAULT_EMBED_SIZE) -> np.ndarray:
    """Default per-frame embedding: grayscale thumbnail, mean-centered.

    The image is converted to grayscale, resized to size x size,
    flattened, scaled to [0, 1], and has its own mean subtracted, so
    uniform brightness changes cancel out.
    """
    from PIL import Image  # local import keeps Pillow optional at import time

    if not isinstance(image, Image.Image):
        image = Image.open(image)
    gray = image.convert("L").resize((size, size), Image.BILINEAR)
    vec = np.asarray(gray, dtype=np.float64).ravel() / 255.0
    return vec - vec.mean()


class EmbeddingProvider(Protocol):
    def embeddings_for(self, session_id: str) -> EmbeddingSet: ...


@dataclass(frozen=True)
class FileEmbeddingProvider:
    """Load `<directory>/<session_id>.emb` written by `save_embeddings`."""

    directory: Path

    def embeddings_for(self, session_id: str) -> EmbeddingSet:
        return load_embeddings(Path(self.directory) / f"{session_id}.emb")


@dataclass(frozen=True)
class ImageFolderEmbeddingProvider:
    """Embed frame images found under `<root>/<session_id>/`.

    File stems must end in the frame number (frame_000012.png, 12.png,
    ...); frames appear in index order.
    """

    root: Path
    size: int = DEFAULT_EMBED_SIZE

    def embeddings_for(self, session_id: str) -> EmbeddingSet:
        session_dir = Path(self.root) / session_id
        if not session_dir.is_dir():
            raise ParseError(f"no frame directory for session {session_id!r}: {session_dir}")
        entries: list[tuple[int, Path]] = []
        for p in sorted(session_dir.iterdir()):
            if p.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            m = _TRAILING_DIGITS.search(p.stem)
            if m is None:
                logger.warning("%s: no frame number in name, skipped", p)
                continue
            entries.append((int(m.group(1)), p))
        if not entries:
            raise ParseError(f"{session_dir}: no usable frame images")
        entries.sort()
        frames = [f for f, _ in entries]
        if len(set(frames)) != len(frames):
            raise StructuralError(f"{session_dir}: duplicate frame numbers in image names")
        vectors = np.stack([image_embedding(p, self.size) for _, p in entries])
        return EmbeddingSet(vectors, np.array(frames, dtype=np.int64))


# --- blink flag CSV ---------------------------------------------------------


def write_blinks_csv(blinks: BlinkFlags, path: str | Path) -> None:
    lines = ["frame,blink"] + [f"{i},{int(v)}" for i, v in enumerate(blinks.flags)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_blinks_csv(path: str | Path, n_frames: int | None = None) -> BlinkFlags:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "frame,blink":
        raise ParseError(f"{path}: bad blink CSV header")
    flags: list[bool] = []
    for row_no, line in enumerate(lines[1:]):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2 or not parts[1] in ("0", "1"):
            raise ParseError(f"{path}: bad blink row {row_no}: {line!r}")
        if int(parts[0]) != row_no:
            raise ParseError(f"{path}: blink row {row_no} carries frame {parts[0]}")
        flags.append(parts[1] == "1")
    if n_frames is not None and len(flags) != n_frames:
        raise StructuralError(f"{path}: {len(flags)} blink rows for {n_frames} frames")
    return BlinkFlags(np.array(flags, dtype=bool))
