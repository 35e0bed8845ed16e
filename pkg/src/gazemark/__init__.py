"""gazemark: speech-marked gaze recordings to per-frame gaze-zone labels.

The package is organized as a batch pipeline:

* `audio` decodes WAV files and finds voice-band activity;
* `stt` models transcripts and wraps transcription backends;
* `annotate` aligns zone keywords, rectifies transcriber misses, and
  emits per-frame labels;
* `refine` polishes labels around zone boundaries via clustering and
  propagates labels over blinks;
* `illum` holds the blackbody chromaticity math and kernel seeding;
* `sessions` loads dataset manifests and splits subjects;
* `synth` generates fully ground-truthed synthetic sessions;
* `evaluation` scores label files;
* `cli` ties everything into the `gazemark` command.
"""

from .annotate import (
    FrameLabels,
    MarkerDetection,
    MarkerTimeline,
    align_keywords,
    emit_frame_labels,
    rectify_gaps,
)
from .audio import AnalysisWindow, AudioTrack, VoicedSegment, analyze_window, magnitude_spectrum, read_wav, to_mono, voiced_segments, write_wav
from .config import PipelineConfig
from .errors import (
    BackendError,
    GazemarkError,
    MetricError,
    NumericError,
    ParseError,
    StructuralError,
)
from .evaluation import ConfusionMatrix, accuracy, confusion, macro_f1, merge_zones_7, recovery_report
from .illum import ChromaticityParams, KernelInitSpec, RadiationConstants, chromaticity, decompose, export_kernel, init_kernel
from .refine import (
    BlinkFlags,
    ClusterModel,
    EmbeddingSet,
    kmeans,
    map_clusters_to_zones,
    propagate_over_blinks,
    reassign_transition_frames,
)
from .sessions import DatasetSplit, SessionManifest, load_dataset, split_subjects
from .stt import KeywordSet, Transcript, TranscriptToken, load_transcript, run_backend
from .synth import CorruptionSpec, GroundTruth, SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AnalysisWindow",
    "AudioTrack",
    "BackendError",
    "BlinkFlags",
    "ChromaticityParams",
    "ClusterModel",
    "ConfusionMatrix",
    "CorruptionSpec",
    "DatasetSplit",
    "EmbeddingSet",
    "FrameLabels",
    "GazemarkError",
    "GroundTruth",
    "KernelInitSpec",
    "KeywordSet",
    "MarkerDetection",
    "MarkerTimeline",
    "MetricError",
    "NumericError",
    "ParseError",
    "PipelineConfig",
    "RadiationConstants",
    "SessionManifest",
    "StructuralError",
    "SynthSpec",
    "Transcript",
    "TranscriptToken",
    "VoicedSegment",
    "accuracy",
    "align_keywords",
    "analyze_window",
    "chromaticity",
    "confusion",
    "decompose",
    "emit_frame_labels",
    "export_kernel",
    "generate",
    "init_kernel",
    "kmeans",
    "load_dataset",
    "load_transcript",
    "macro_f1",
    "magnitude_spectrum",
    "map_clusters_to_zones",
    "merge_zones_7",
    "propagate_over_blinks",
    "read_wav",
    "reassign_transition_frames",
    "recovery_report",
    "rectify_gaps",
    "run_backend",
    "split_subjects",
    "to_mono",
    "voiced_segments",
    "write_wav",
]
