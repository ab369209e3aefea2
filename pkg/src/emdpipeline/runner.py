"""
Orchestration of the detect, eval, synth and flow commands.
"""

import logging
import os
import time
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml
from rich.console import Console

from emdmotion.box_fit import classify_by_size, estimate_center, fit_box
from emdmotion.config import PipelineConfig, View
from emdmotion.emd_core import LowPassState, MotionField, detect_motion, lowpass_step
from emdmotion.errors import ConfigurationError, EmdMotionError, ValidationError
from emdmotion.evaluation import (
    CameraCalibration,
    MatchResult,
    MetricsReport,
    compute_metrics,
    match_detections,
    metrics_table,
)
from emdmotion.exports import (
    export_bev_maps,
    flow_image,
    read_motion_csv,
    write_metrics_csv,
    write_motion_csv,
    write_ppm,
    write_proposals,
    write_recall_csv,
)
from emdmotion.fusion import Proposal, cluster_moving_cells, extract_proposal_points, fuse_multiframe
from emdmotion.models import Detection, FrameSequence, ObjectLabel, PointCloud
from emdmotion.preprocess import BevMaps, compensate_ego_motion, remove_ground, voxelize_bev
from emdmotion.scene_io import load_detections, load_labels, read_sequence, save_detections, write_sequence
from emdmotion.synthetic import SYNTHETIC_ORIGIN, SceneSpec, build_standard_suite, generate_synthetic_scene, with_seed

from .settings import OutputFiles

logger = logging.getLogger(__name__)


def parse_frame_range(text: str | None) -> range | None:
    """Parse a half-open ``start:stop`` frame range.

    Args:
        text: Range such as ``0:10``, or None for all frames

    Returns:
        The frame indices, or None

    Raises:
        ConfigurationError: If the range is malformed or empty
    """
    if text is None or not text.strip():
        return None
    parts = text.split(":")
    try:
        if len(parts) != 2:
            raise ValueError(text)
        start, stop = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigurationError(f"expected 'start:stop', got {text!r}", key="io.frames") from exc
    if start < 0 or stop <= start:
        raise ConfigurationError(f"empty or negative range {text!r}", key="io.frames")
    return range(start, stop)


@dataclass
class FrameReport:
    """Counters and stage timings of one processed frame."""

    frame_index: int
    energy_evaluations: int = 0
    exhaustive_evaluations: int = 0
    moving_cells: int = 0
    clusters: int = 0
    detections: int = 0
    degenerate_boxes: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def counters(self) -> dict[str, Any]:
        return {
            "frame": self.frame_index,
            "energy_evaluations": self.energy_evaluations,
            "exhaustive_evaluations": self.exhaustive_evaluations,
            "moving_cells": self.moving_cells,
            "clusters": self.clusters,
            "detections": self.detections,
            "degenerate_boxes": self.degenerate_boxes,
        }


@dataclass
class DetectionRun:
    """Outcome of a detection run over a sequence."""

    detections: list[Detection] = field(default_factory=list)
    proposals: list[Proposal] = field(default_factory=list)
    fields: dict[int, MotionField] = field(default_factory=dict)
    maps: dict[int, BevMaps] = field(default_factory=dict)
    frames: list[FrameReport] = field(default_factory=list)

    @property
    def failed_frames(self) -> list[int]:
        return [report.frame_index for report in self.frames if report.error is not None]

    @property
    def energy_evaluations(self) -> int:
        return sum(report.energy_evaluations for report in self.frames)

    @property
    def exhaustive_evaluations(self) -> int:
        return sum(report.exhaustive_evaluations for report in self.frames)


@contextmanager
def _timed(report: FrameReport, stage: str) -> Iterator[None]:
    started = time.perf_counter()
    try:
        yield
    finally:
        report.timings[stage] = report.timings.get(stage, 0.0) + time.perf_counter() - started


def _workers(config: PipelineConfig) -> int:
    return config.workers or os.cpu_count() or 1


def _detect_frame(
    index: int, sequence: FrameSequence, clouds: Sequence[PointCloud], config: PipelineConfig, run: DetectionRun
) -> FrameReport:
    report = FrameReport(index)
    frames = sequence.frames
    pose = frames[index].pose
    depth = min(index, max(config.fusion.num_frames, config.lowpass_window))

    with _timed(report, "preprocess"):
        maps_t = voxelize_bev(clouds[index], config.bev)
        history = {
            past: voxelize_bev(compensate_ego_motion(clouds[past], frames[past].pose, pose), config.bev)
            for past in range(index - depth, index)
        }
    run.maps[index] = maps_t
    if not depth:
        return report

    with _timed(report, "motion"):
        primed = LowPassState(config.search.tau)
        for past in range(max(0, index - config.lowpass_window), index):
            lowpass_step(primed, history[past].occupancy)
        fields = [
            detect_motion(
                maps_t,
                [history[index - interval]],
                primed.copy(),
                config.search,
                config.inhibition,
                workers=_workers(config),
                interval=interval,
            )
            for interval in range(1, min(config.fusion.num_frames, index) + 1)
        ]
    report.energy_evaluations = sum(item.energy_evaluations for item in fields)
    report.exhaustive_evaluations = sum(item.exhaustive_evaluations for item in fields)

    with _timed(report, "fusion"):
        fused = fuse_multiframe(fields, config.fusion)
        clusters = cluster_moving_cells(fused, config.cluster)
    report.moving_cells = int(fused.moving.sum())
    report.clusters = len(clusters)

    with _timed(report, "proposals"):
        proposals = []
        for cluster in clusters:
            proposal = extract_proposal_points(
                cluster, clouds[index], config.bev, config.cluster.expansion, sequence.cadence, index
            )
            if proposal is not None:
                proposals.append(proposal)

    detections = []
    with _timed(report, "box_fit"):
        for proposal in proposals:
            fitted = fit_box(proposal.points, estimate_center(proposal.points), config.box)
            report.degenerate_boxes += fitted.degenerate
            detections.append(Detection(index, classify_by_size(fitted.box), fitted.box, proposal.speed))
    run.fields[index] = fused
    run.proposals.extend(proposals)
    run.detections.extend(detections)
    report.detections = len(detections)
    return report


def detect_sequence(sequence: FrameSequence, config: PipelineConfig) -> DetectionRun:
    """Run motion detection and box estimation over every frame of a sequence.

    Frames are processed in order. The first frame has no history and yields
    no detections; later frames fuse up to ``fusion.num_frames`` intervals.
    A frame failing with a library error, a ``ValueError`` or an
    ``ArithmeticError`` is logged with its index and skipped; other
    exceptions propagate.

    Args:
        sequence: Input frames with poses
        config: Pipeline configuration

    Returns:
        Detections, proposals, fused motion fields and per-frame reports
    """
    run = DetectionRun()
    clouds = [remove_ground(frame.cloud, config.ground) for frame in sequence.frames]
    for index in range(len(sequence)):
        try:
            report = _detect_frame(index, sequence, clouds, config, run)
        except EmdMotionError as exc:
            logger.error("Frame %d failed: %s", index, exc)
            report = FrameReport(index, error=str(exc))
        except (ValueError, ArithmeticError) as exc:
            logger.exception("Frame %d failed in a numeric routine.", index)
            report = FrameReport(index, error=f"{type(exc).__name__}: {exc}")
        run.frames.append(report)
        logger.info(
            "Frame %d: %d moving cells, %d detections, %d energy evaluations.",
            index,
            report.moving_cells,
            report.detections,
            report.energy_evaluations,
        )
    return run


def detection_manifest(config: PipelineConfig, run: DetectionRun, sequence: FrameSequence) -> dict[str, Any]:
    """Reproducible summary of a detection run; wall-clock timings are kept out of it."""
    exhaustive = run.exhaustive_evaluations
    return {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "sequence": config.io.sequence,
        "frames": len(sequence),
        "cadence": sequence.cadence,
        "strategy": config.search.strategy,
        "fusion_frames": config.fusion.num_frames,
        "detections": len(run.detections),
        "energy_evaluations": run.energy_evaluations,
        "exhaustive_evaluations": exhaustive,
        "evaluation_ratio": run.energy_evaluations / exhaustive if exhaustive else 0.0,
        "failed_frames": run.failed_frames,
        "per_frame": [report.counters() for report in run.frames],
        "input_metadata": dict(sequence.metadata),
    }


def _write_yaml(path: Path, document: dict[str, Any]) -> None:
    path.write_text(yaml.safe_dump(document, sort_keys=True), encoding="utf-8")


def run_detect(config: PipelineConfig, export_bev: bool = False) -> DetectionRun:
    """Detect moving objects in the configured sequence and write all results.

    Args:
        config: Pipeline configuration naming the sequence and output directory
        export_bev: Also write the BEV grids of every frame

    Returns:
        The detection run

    Raises:
        ConfigurationError: If no sequence is configured
        ValidationError: If input files are missing
    """
    if not config.io.sequence:
        raise ConfigurationError("an input sequence directory is required", key="io.sequence")
    sequence = read_sequence(config.io.sequence, parse_frame_range(config.io.frames), config.cadence)
    logger.info("Loaded %d frames from %s.", len(sequence), config.io.sequence)
    run = detect_sequence(sequence, config)

    out = Path(config.io.output)
    (out / OutputFiles.MOTION_DIR).mkdir(parents=True, exist_ok=True)
    (out / OutputFiles.FLOW_DIR).mkdir(parents=True, exist_ok=True)
    save_detections(out / OutputFiles.DETECTIONS, run.detections, len(sequence))
    write_proposals(run.proposals, out / OutputFiles.PROPOSALS, out / OutputFiles.PROPOSAL_POINTS)
    for index, fused in sorted(run.fields.items()):
        write_motion_csv(fused, config.bev, out / OutputFiles.MOTION_DIR / f"{index:06d}.csv")
        write_ppm(
            out / OutputFiles.FLOW_DIR / f"{index:06d}.ppm",
            flow_image(fused.vectors, fused.moving),
            f"frame {index} flow",
        )
    if export_bev:
        for index, maps in sorted(run.maps.items()):
            export_bev_maps(maps, config.bev, out / OutputFiles.BEV_DIR, index)
    (out / OutputFiles.CONFIG).write_text(config.dump(), encoding="utf-8")
    _write_yaml(out / OutputFiles.MANIFEST, detection_manifest(config, run, sequence))
    _write_yaml(
        out / OutputFiles.TIMINGS,
        {"per_frame": [{"frame": report.frame_index, **report.timings} for report in run.frames]},
    )
    logger.info("Wrote %d detections to %s.", len(run.detections), out)
    return run


def evaluate_frames(
    detections: Sequence[Detection],
    labels: Sequence[ObjectLabel],
    frames: int,
    config: PipelineConfig,
    calibration: CameraCalibration | None = None,
) -> MetricsReport:
    """Match detections to labels frame by frame in every available view and pool the metrics.

    Args:
        detections: Detections of all frames
        labels: Ground truth of all frames
        frames: Number of frames in the sequence
        config: Pipeline configuration providing the evaluation settings
        calibration: Camera calibration enabling the 2D view

    Returns:
        The pooled report
    """
    settings = config.evaluation
    views: tuple[View, ...] = ("bev", "3d", "2d") if calibration is not None else ("bev", "3d")
    by_frame_dets: dict[int, list[Detection]] = {}
    by_frame_gts: dict[int, list[ObjectLabel]] = {}
    for detection in detections:
        by_frame_dets.setdefault(detection.frame_index, []).append(detection)
    for label in labels:
        by_frame_gts.setdefault(label.frame_index, []).append(label)

    matches: list[MatchResult] = []
    for view in views:
        for index in range(frames):
            matches.append(
                match_detections(
                    by_frame_dets.get(index, []),
                    by_frame_gts.get(index, []),
                    settings.iou_threshold,
                    view,
                    calibration,
                    settings.strict,
                    index,
                )
            )
    return compute_metrics(matches, settings.distance_bins(), settings.mode, settings.near_range, views)


def _frame_count(
    detections: Sequence[Detection], det_frames: int | None, labels: Sequence[ObjectLabel], label_frames: int | None
) -> int:
    if det_frames is not None and label_frames is not None and det_frames != label_frames:
        raise ValidationError(f"Detections cover {det_frames} frames but labels cover {label_frames} frames.")
    declared = label_frames if label_frames is not None else det_frames
    if declared is None:
        indices = [item.frame_index for item in [*detections, *labels]]
        return max(indices) + 1 if indices else 0
    outside = sorted({item.frame_index for item in [*detections, *labels] if item.frame_index >= declared})
    if outside:
        raise ValidationError(f"Frames {outside} lie outside the {declared} declared frames.")
    return declared


def passes_thresholds(report: MetricsReport, config: PipelineConfig) -> bool:
    """Check the gating thresholds against the primary view."""
    primary = report.primary
    if primary is None:
        return False
    settings = config.evaluation
    return primary.precision >= settings.min_precision and primary.recall >= settings.min_recall


def run_eval(
    config: PipelineConfig,
    detections_path: str | Path | None = None,
    labels_path: str | Path | None = None,
    calibration_path: str | Path | None = None,
    console: Console | None = None,
) -> tuple[MetricsReport, bool]:
    """Evaluate a detection file against a label file and write the reports.

    Args:
        config: Pipeline configuration; paths fall back to its ``io`` section
        detections_path: Detection file
        labels_path: Label file
        calibration_path: KITTI calibration enabling the 2D view
        console: Console receiving the metrics table

    Returns:
        The report and whether the configured minimum thresholds were met

    Raises:
        ConfigurationError: If a path is missing or the 2D view is gated without calibration
        ValidationError: If the files disagree on the frames they cover
    """
    detections_path = detections_path or config.io.detections
    labels_path = labels_path or config.io.labels
    if not detections_path:
        raise ConfigurationError("a detection file is required", key="io.detections")
    if not labels_path:
        raise ConfigurationError("a label file is required", key="io.labels")
    if config.evaluation.mode == "2d" and calibration_path is None:
        raise ConfigurationError("the 2D view needs a calibration file", key="evaluation.mode")
    calibration = CameraCalibration.load(calibration_path) if calibration_path is not None else None

    detections, det_frames = load_detections(detections_path)
    labels, label_frames = load_labels(labels_path)
    frames = _frame_count(detections, det_frames, labels, label_frames)
    report = evaluate_frames(detections, labels, frames, config, calibration)

    out = Path(config.io.output)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / OutputFiles.METRICS)
    write_recall_csv(report, out / OutputFiles.RECALL)
    (console or Console()).print(metrics_table(report))
    passed = passes_thresholds(report, config)
    if report.degenerate:
        logger.warning("Metrics are degenerate: a precision or recall denominator is zero.")
    logger.info("Evaluated %d frames; thresholds %s.", frames, "met" if passed else "not met")
    return report, passed


def run_synth(
    spec_path: str | Path | None,
    output: str | Path,
    config: PipelineConfig,
    seed: int | None = None,
    suite: bool = False,
) -> list[Path]:
    """Generate synthetic sequences.

    Args:
        spec_path: Scene description file, ignored with ``suite``
        output: Output directory; the suite writes one subdirectory per scene
        config: Pipeline configuration providing the grid
        seed: Seed overriding the description's seed, or the suite seed
        suite: Write the standard twenty-scene suite

    Returns:
        Written sequence directories

    Raises:
        ConfigurationError: If neither a description nor the suite is requested
    """
    out = Path(output)
    if suite:
        scenes = [(out / name, spec) for name, spec in build_standard_suite(seed if seed is not None else config.seed)]
    elif spec_path is None:
        raise ConfigurationError("a scene description or --suite is required")
    else:
        spec = SceneSpec.load(spec_path)
        scenes = [(out, spec if seed is None else with_seed(spec, seed))]

    written = []
    for directory, spec in scenes:
        sequence = generate_synthetic_scene(spec, config.bev)
        write_sequence(directory, sequence, SYNTHETIC_ORIGIN, {"seed": spec.seed})
        (directory / "scene.txt").write_text(spec.dumps(), encoding="utf-8")
        written.append(directory)
    return written


def run_flow(motion_dir: str | Path, output: str | Path, config: PipelineConfig) -> list[Path]:
    """Render saved motion-field CSVs as flow images.

    Args:
        motion_dir: Directory of motion CSVs written by a detection run
        output: Directory receiving one PPM per CSV
        config: Pipeline configuration providing the grid shape

    Returns:
        Written images

    Raises:
        ValidationError: If the directory holds no motion CSV
    """
    sources = sorted(Path(motion_dir).glob("*.csv"))
    if not sources:
        raise ValidationError(f"Missing input files: no motion CSV in {motion_dir}")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for source in sources:
        vectors, moving = read_motion_csv(source, config.bev.shape)
        target = out / f"{source.stem}.ppm"
        write_ppm(target, flow_image(vectors, moving), f"{source.name} flow")
        written.append(target)
    logger.info("Rendered %d flow images into %s.", len(written), out)
    return written
