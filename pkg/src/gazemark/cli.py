"""Command-line interface.

Subcommands cover the full batch workflow: `synth` writes a synthetic
dataset, `annotate` turns audio plus transcripts into frame labels,
`refine` polishes labels around zone boundaries, `split` partitions
subjects, `eval` scores label files, and `illum dump` / `illum kernel`
expose the illumination math. Exit codes: 0 on success, 1 when any
session failed, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import annotate as annotate_mod
from . import refine as refine_mod
from .audio import read_wav
from .config import PipelineConfig, apply_overrides, load_config
from .errors import GazemarkError
from .evaluation import accuracy, confusion, format_confusion, macro_f1, merge_zones_7
from .illum import (
    ChromaticityParams,
    KernelInitSpec,
    RadiationConstants,
    chromaticity,
    decompose,
    export_kernel,
    init_kernel,
)
from .sessions import SessionManifest, load_dataset, save_split, split_subjects
from .stt import (
    ExternalCommandBackend,
    SidecarBackend,
    ToneSpotterBackend,
    run_backend,
)
from .synth import dataset_spec_from_obj, write_dataset

logger = logging.getLogger(__name__)

STT_COMMAND_ENV = "GAZEMARK_STT_COMMAND"


def _atomic_write_text(path: Path, text: str) -> None:
    """Write through a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "pipeline tuning", "flags override values from --config, which override the defaults"
    )
    group.add_argument("--config", type=Path, help="JSON file with pipeline settings")
    group.add_argument("--window-s", type=float, dest="window_s",
                       help="analysis window length in seconds (default 0.25)")
    group.add_argument("--hop-s", type=float, dest="hop_s",
                       help="window hop in seconds (default 0.10)")
    group.add_argument("--band-lo-hz", type=float, dest="band_lo_hz",
                       help="voice band lower edge in Hz (default 300)")
    group.add_argument("--band-hi-hz", type=float, dest="band_hi_hz",
                       help="voice band upper edge in Hz (default 3000)")
    group.add_argument("--ratio-threshold", type=float, dest="ratio_threshold",
                       help="minimum in-band energy fraction for a voiced window (default 0.5)")
    group.add_argument("--offset-frames", type=int, dest="offset_frames",
                       help="frames of padding around each detected utterance (default 10)")
    group.add_argument("--min-confidence", type=float, dest="min_confidence",
                       help="minimum token confidence for a keyword match, after any "
                            "alias penalty (default 0.5)")
    group.add_argument("--transition-halfwidth", type=int, dest="transition_halfwidth",
                       help="half-width in frames of the re-labelling window around each "
                            "zone boundary (default 10)")
    group.add_argument("--k", type=int, dest="k",
                       help="cluster count for refinement, one per zone (default 9)")
    group.add_argument("--seed", type=int, dest="seed",
                       help="random seed for clustering (default 42)")


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "window_s", "hop_s", "band_lo_hz", "band_hi_hz", "ratio_threshold",
            "offset_frames", "min_confidence", "transition_halfwidth", "k", "seed",
        )
    }
    return apply_overrides(config, overrides)


def _make_backend(args: argparse.Namespace, config: PipelineConfig):
    name = args.stt_backend
    if name == "tone-spotter":
        return ToneSpotterBackend(
            window_s=config.window_s,
            hop_s=config.hop_s,
            band=config.band,
            ratio_threshold=config.ratio_threshold,
        )
    if name == "sidecar":
        return SidecarBackend()
    if name == "command":
        command = args.stt_command or os.environ.get(STT_COMMAND_ENV, "")
        if not command:
            raise ValueError(
                f"--stt-backend command needs --stt-command or ${STT_COMMAND_ENV}"
            )
        return ExternalCommandBackend(command=tuple(command.split()), timeout_s=args.stt_timeout_s)
    raise ValueError(f"unknown backend {name!r}")


# --- annotate ---------------------------------------------------------------


def annotate_session(
    manifest: SessionManifest,
    config: PipelineConfig,
    backend,
    out_dir: Path,
) -> dict:
    track = read_wav(manifest.audio_path)
    transcript = run_backend(
        track,
        backend,
        audio_path=manifest.audio_path,
        transcript_path=manifest.transcript_path,
    )
    aligned = annotate_mod.align_keywords(
        transcript,
        min_confidence=config.min_confidence,
        session_id=manifest.session_id,
    )
    rectified = annotate_mod.rectify_gaps(
        aligned,
        track,
        annotate_mod.RectificationParams(
            window_s=config.window_s,
            hop_s=config.hop_s,
            band=config.band,
            ratio_threshold=config.ratio_threshold,
        ),
    )
    labels = annotate_mod.emit_frame_labels(
        rectified, manifest.fps, manifest.n_frames, config.offset_frames
    )
    _atomic_write_text(
        out_dir / f"{manifest.session_id}.labels.csv", annotate_mod.labels_to_csv_text(labels)
    )
    _atomic_write_text(
        out_dir / f"{manifest.session_id}.timeline.json",
        json.dumps(annotate_mod.timeline_to_obj(rectified), indent=2, sort_keys=True) + "\n",
    )
    return {
        "matched_zones": list(aligned.zones()),
        "rectified_zones": sorted(set(rectified.zones()) - set(aligned.zones())),
        "unresolved_zones": list(rectified.missing_zones()),
        "labeled_frames": labels.labeled_count,
    }


def _run_sessions(sessions, worker, jobs: int) -> tuple[dict, dict]:
    """Run `worker` per session, continuing past failures."""
    summaries: dict[str, dict] = {}
    failures: dict[str, str] = {}

    def _one(manifest: SessionManifest) -> None:
        try:
            summaries[manifest.session_id] = worker(manifest)
        except (GazemarkError, OSError, ValueError) as exc:
            logger.error("session %s failed: %s", manifest.session_id, exc)
            failures[manifest.session_id] = str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_one, sessions))
    else:
        for manifest in sessions:
            _one(manifest)
    return summaries, failures


def cmd_annotate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    backend = _make_backend(args, config)
    sessions = load_dataset(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    summaries, failures = _run_sessions(
        sessions,
        lambda m: annotate_session(m, config, backend, out_dir),
        args.jobs,
    )
    report = {"sessions": summaries, "failures": failures}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if failures else 0


# --- refine -----------------------------------------------------------------


def _refine_provider(args: argparse.Namespace):
    if args.embeddings_dir is not None:
        return refine_mod.FileEmbeddingProvider(Path(args.embeddings_dir))
    return refine_mod.ImageFolderEmbeddingProvider(Path(args.frames_dir))


def refine_session(
    manifest: SessionManifest,
    config: PipelineConfig,
    embeddings: refine_mod.EmbeddingSet,
    model: refine_mod.ClusterModel,
    mapping: dict[int, int],
    labels_dir: Path,
    blinks_dir: Path | None,
    out_dir: Path,
) -> dict:
    labels = annotate_mod.read_labels_csv(
        labels_dir / f"{manifest.session_id}.labels.csv", fps=manifest.fps
    )
    if labels.n_frames != manifest.n_frames:
        raise GazemarkError(
            f"label file covers {labels.n_frames} frames, manifest says {manifest.n_frames}"
        )
    refined, report = refine_mod.reassign_transition_frames(
        labels, embeddings, model, mapping, config.transition_halfwidth
    )
    propagated = 0
    if blinks_dir is not None:
        blinks = refine_mod.read_blinks_csv(
            blinks_dir / f"{manifest.session_id}.blinks.csv", n_frames=manifest.n_frames
        )
        before = refined.zones.copy()
        refined = refine_mod.propagate_over_blinks(refined, blinks)
        propagated = int(np.count_nonzero(refined.zones != before))
    _atomic_write_text(
        out_dir / f"{manifest.session_id}.labels.csv", annotate_mod.labels_to_csv_text(refined)
    )
    summary = report.to_dict()
    summary["propagated_frames"] = propagated
    summary["cluster_to_zone"] = {str(c): z for c, z in sorted(mapping.items())}
    _atomic_write_text(
        out_dir / f"{manifest.session_id}.refine-report.json",
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    return summary


def cmd_refine(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    sessions = load_dataset(args.manifest)
    provider = _refine_provider(args)
    labels_dir = Path(args.labels_dir)
    blinks_dir = Path(args.blinks_dir) if args.blinks_dir else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    shared_model: refine_mod.ClusterModel | None = None
    shared_mapping: dict[int, int] | None = None
    embeddings_by_session: dict[str, refine_mod.EmbeddingSet] = {}
    failures: dict[str, str] = {}

    if args.corpus_wide:
        # one clustering over every session's embeddings, majority vote pooled
        stacked = []
        zones = []
        usable = []
        for manifest in sessions:
            try:
                emb = provider.embeddings_for(manifest.session_id)
                labels = annotate_mod.read_labels_csv(
                    labels_dir / f"{manifest.session_id}.labels.csv", fps=manifest.fps
                )
            except (GazemarkError, OSError, ValueError) as exc:
                failures[manifest.session_id] = str(exc)
                continue
            embeddings_by_session[manifest.session_id] = emb
            stacked.append(emb.vectors)
            zones.append(labels.zones[emb.frame_indices])
            usable.append(manifest)
        if not usable:
            print(json.dumps({"sessions": {}, "failures": failures}, indent=2, sort_keys=True))
            return 1
        pooled = refine_mod.EmbeddingSet.from_vectors(np.vstack(stacked))
        shared_model = refine_mod.kmeans(pooled, config.k, seed=config.seed)
        shared_mapping = refine_mod.map_assignments_to_zones(
            shared_model.assignments, config.k, np.concatenate(zones)
        )
        sessions = usable

    def _one(manifest: SessionManifest) -> dict:
        if shared_model is not None and shared_mapping is not None:
            emb = embeddings_by_session[manifest.session_id]
            model, mapping = shared_model, shared_mapping
        else:
            emb = provider.embeddings_for(manifest.session_id)
            labels = annotate_mod.read_labels_csv(
                labels_dir / f"{manifest.session_id}.labels.csv", fps=manifest.fps
            )
            model = refine_mod.kmeans(emb, config.k, seed=config.seed)
            mapping = refine_mod.map_clusters_to_zones(model, labels, emb)
        return refine_session(
            manifest, config, emb, model, mapping, labels_dir, blinks_dir, out_dir
        )

    summaries, run_failures = _run_sessions(sessions, _one, args.jobs)
    failures.update(run_failures)
    print(json.dumps({"sessions": summaries, "failures": failures}, indent=2, sort_keys=True))
    return 1 if failures else 0


# --- synth / split / eval ---------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GazemarkError(f"{args.spec}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    dataset = dataset_spec_from_obj(obj)
    manifest_path = write_dataset(dataset, args.out_dir)
    print(str(manifest_path))
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    sessions = load_dataset(args.manifest)
    parts = args.fractions.split(",")
    if len(parts) != 3:
        raise ValueError(f"--fractions needs three comma-separated values, got {args.fractions!r}")
    fractions = tuple(float(p) for p in parts)
    split = split_subjects(sessions, fractions, seed=args.seed)
    save_split(split, args.out)
    counts = split.counts()
    print(json.dumps({"train": counts[0], "val": counts[1], "test": counts[2]}, sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    truth = annotate_mod.read_labels_csv(args.truth)
    pred = annotate_mod.read_labels_csv(args.pred)
    if args.merge7:
        truth = merge_zones_7(truth)
        pred = merge_zones_7(pred)
    matrix = confusion(truth, pred)
    print(format_confusion(matrix, merged=args.merge7))
    metrics = {
        "classes": list(matrix.classes),
        "counts": matrix.counts.tolist(),
        "excluded_frames": matrix.excluded,
        "counted_frames": matrix.total,
        "merged_7": bool(args.merge7),
    }
    if matrix.total:
        metrics["accuracy_percent"] = accuracy(matrix)
        metrics["macro_f1"] = macro_f1(matrix)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _atomic_write_text(Path(args.out), text + "\n")
    return 0


# --- illum ------------------------------------------------------------------


def _triple(text: str, what: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"{what} needs three comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _chromaticity_params(args: argparse.Namespace) -> ChromaticityParams:
    kwargs = {}
    if args.wavelengths_nm:
        kwargs["wavelengths_nm"] = _triple(args.wavelengths_nm, "--wavelengths-nm")
    if args.reflectance:
        kwargs["reflectance"] = _triple(args.reflectance, "--reflectance")
    if args.channel_gain:
        kwargs["channel_gain"] = _triple(args.channel_gain, "--channel-gain")
    if args.temperature_k is not None:
        kwargs["temperature_k"] = args.temperature_k
    return ChromaticityParams(**kwargs)


def cmd_illum_dump(args: argparse.Namespace) -> int:
    params = _chromaticity_params(args)
    constants = RadiationConstants()
    c = chromaticity(params, constants)
    part_a, part_b = decompose(params, constants)
    print(
        json.dumps(
            {
                "chromaticity": c.tolist(),
                "constant_part": part_a.tolist(),
                "thermal_part": part_b.tolist(),
                "k2_m_kelvin": constants.k2,
                "temperature_k": params.temperature_k,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_illum_kernel(args: argparse.Namespace) -> int:
    try:
        obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GazemarkError(f"{args.spec}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or "shape" not in obj:
        raise GazemarkError(f"{args.spec}: kernel spec must be an object with a 'shape'")
    spec = KernelInitSpec(
        shape=tuple(int(s) for s in obj["shape"]),
        temperature_mean_k=float(obj.get("temperature_mean_k", 5000.0)),
        temperature_std_k=float(obj.get("temperature_std_k", 500.0)),
        seed=int(obj.get("seed", 0)),
    )
    params_kwargs = {}
    for key in ("wavelengths_nm", "reflectance", "channel_gain"):
        if key in obj:
            params_kwargs[key] = tuple(float(v) for v in obj[key])
    params = ChromaticityParams(**params_kwargs)
    kernel = init_kernel(spec, params)
    export_kernel(kernel, args.out)
    print(str(args.out))
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazemark",
        description="Turn speech-marked gaze recordings into per-frame gaze-zone labels.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="audio + transcripts -> frame label files")
    p.add_argument("--manifest", type=Path, required=True, help="dataset manifest JSON")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for label files")
    p.add_argument("--stt-backend", choices=("sidecar", "tone-spotter", "command"),
                   default="sidecar",
                   help="transcript source: sidecar file next to the audio, signal-driven "
                        "tone spotting, or an external command (default sidecar)")
    p.add_argument("--stt-command",
                   help=f"external recognizer command line; ${STT_COMMAND_ENV} is the fallback. "
                        "The WAV path is appended as the final argument")
    p.add_argument("--stt-timeout-s", type=float, default=60.0, dest="stt_timeout_s",
                   help="timeout for the external command in seconds (default 60)")
    p.add_argument("--jobs", type=int, default=1, help="sessions processed in parallel (default 1)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("refine", help="re-label frames around zone boundaries")
    p.add_argument("--manifest", type=Path, required=True, help="dataset manifest JSON")
    p.add_argument("--labels-dir", type=Path, required=True,
                   help="directory with <session>.labels.csv from annotate")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--embeddings-dir", type=Path,
                     help="directory with <session>.emb embedding files")
    src.add_argument("--frames-dir", type=Path,
                     help="directory with <session>/ frame images to embed")
    p.add_argument("--blinks-dir", type=Path,
                   help="directory with <session>.blinks.csv; blink frames borrow the "
                        "preceding non-blink label")
    p.add_argument("--corpus-wide", action="store_true",
                   help="cluster all sessions' embeddings together instead of per session")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for refined labels")
    p.add_argument("--jobs", type=int, default=1, help="sessions processed in parallel (default 1)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--spec", type=Path, required=True,
                   help="JSON spec: session fields plus n_sessions, miss_rate, substitute_rate")
    p.add_argument("--out-dir", type=Path, required=True, help="dataset output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="partition subjects into train/val/test")
    p.add_argument("--manifest", type=Path, required=True, help="dataset manifest JSON")
    p.add_argument("--out", type=Path, required=True, help="output split JSON")
    p.add_argument("--fractions", default="0.60,0.245,0.155",
                   help="train,val,test fractions (default 0.60,0.245,0.155)")
    p.add_argument("--seed", type=int, default=42, help="shuffle seed (default 42)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="score predicted labels against truth labels")
    p.add_argument("--truth", type=Path, required=True, help="ground-truth label CSV")
    p.add_argument("--pred", type=Path, required=True, help="predicted label CSV")
    p.add_argument("--merge7", action="store_true",
                   help="merge zones 1+2 and 5+6 into single classes before scoring")
    p.add_argument("--out", type=Path, help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("illum", help="illumination math utilities")
    illum_sub = p.add_subparsers(dest="illum_command", required=True)

    q = illum_sub.add_parser("dump", help="print chromaticity values as JSON")
    q.add_argument("--wavelengths-nm", help="R,G,B wavelengths in nm (default 685,532.5,472.5)")
    q.add_argument("--reflectance", help="per-channel reflectance samples (default 1,1,1)")
    q.add_argument("--channel-gain", help="per-channel gain factors (default 1,1,1)")
    q.add_argument("--temperature-k", type=float, dest="temperature_k",
                   help="source temperature in kelvin (default 5000)")
    q.set_defaults(func=cmd_illum_dump)

    q = illum_sub.add_parser("kernel", help="seed an illumination-aware kernel file")
    q.add_argument("--spec", type=Path, required=True,
                   help="JSON spec: shape (channel axis first, size 3), temperature_mean_k, "
                        "temperature_std_k, seed, optional chromaticity fields")
    q.add_argument("--out", type=Path, required=True, help="output kernel file")
    q.set_defaults(func=cmd_illum_kernel)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (GazemarkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
