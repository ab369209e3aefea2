"""
Matching of detections to ground truth and motion-detection metrics.

Only moving ground-truth objects take part in recall. A detection that
matches no moving object, including one placed on a stationary object,
counts as a false positive.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from rich.table import Table

from .box_fit import iou
from .config import EvalConfig, View
from .const import EvalDefaults
from .errors import ValidationError
from .models import Box3D, Category, Detection, FloatArray, ObjectLabel

logger = logging.getLogger(__name__)

VIEWS: tuple[View, ...] = ("bev", "3d", "2d")


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole projection of Lidar boxes into a camera image."""

    projection: FloatArray
    lidar_to_camera: FloatArray
    image_size: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "projection", np.asarray(self.projection, dtype=np.float64).reshape(3, 4))
        object.__setattr__(self, "lidar_to_camera", np.asarray(self.lidar_to_camera, dtype=np.float64).reshape(4, 4))
        if min(self.image_size) <= 0:
            raise ValidationError(f"Image size must be positive (got {self.image_size}).")

    @classmethod
    def from_kitti(
        cls, text: str, image_size: tuple[int, int] = (1242, 375), camera: str = "P2"
    ) -> "CameraCalibration":
        """Parse a KITTI calibration file.

        Args:
            text: File content with ``key: values`` lines
            image_size: Image width and height in pixels
            camera: Key of the projection matrix

        Returns:
            The calibration; the rectification, when present, is folded into the Lidar-to-camera transform

        Raises:
            ValidationError: If the projection or the Lidar-to-camera entry is missing
        """
        entries: dict[str, FloatArray] = {}
        for line in text.splitlines():
            if ":" not in line:
                continue
            key, values = line.split(":", 1)
            try:
                entries[key.strip()] = np.array([float(value) for value in values.split()])
            except ValueError:
                continue
        velo = entries.get("Tr_velo_cam", entries.get("Tr_velo_to_cam"))
        if camera not in entries or velo is None:
            raise ValidationError(f"Calibration needs {camera} and Tr_velo_cam entries.")
        lidar_to_camera = np.eye(4)
        lidar_to_camera[:3, :] = velo.reshape(3, 4)
        rectification = entries.get("R_rect", entries.get("R0_rect"))
        if rectification is not None:
            rect = np.eye(4)
            rect[:3, :3] = rectification.reshape(3, 3)
            lidar_to_camera = rect @ lidar_to_camera
        return cls(entries[camera], lidar_to_camera, image_size)

    @classmethod
    def load(cls, path: str | Path, image_size: tuple[int, int] = (1242, 375)) -> "CameraCalibration":
        return cls.from_kitti(Path(path).read_text(encoding="utf-8"), image_size)

    def project_box(self, box: Box3D) -> tuple[float, float, float, float] | None:
        """Image rectangle of a box, clipped to the image.

        Args:
            box: Box in Lidar coordinates

        Returns:
            (left, top, right, bottom) in pixels, or None when the box is outside the field of view
        """
        corners = np.column_stack([box.corners_3d(), np.ones(8)])
        camera = corners @ self.lidar_to_camera.T
        camera = camera[camera[:, 2] > 0.1]
        if not len(camera):
            return None
        pixels = camera @ self.projection.T
        u = pixels[:, 0] / pixels[:, 2]
        v = pixels[:, 1] / pixels[:, 2]
        width, height = self.image_size
        left, right = max(0.0, float(u.min())), min(float(width), float(u.max()))
        top, bottom = max(0.0, float(v.min())), min(float(height), float(v.max()))
        if right <= left or bottom <= top:
            return None
        return (left, top, right, bottom)


def rectangle_iou(first: tuple[float, float, float, float], second: tuple[float, float, float, float]) -> float:
    width = max(0.0, min(first[2], second[2]) - max(first[0], second[0]))
    height = max(0.0, min(first[3], second[3]) - max(first[1], second[1]))
    overlap = width * height
    union = (first[2] - first[0]) * (first[3] - first[1]) + (second[2] - second[0]) * (second[3] - second[1]) - overlap
    return overlap / union if union > 0.0 else 0.0


@dataclass(frozen=True)
class ObjectOutcome:
    """Moving ground-truth object and whether a detection matched it."""

    category: Category
    distance: float
    detected: bool


@dataclass(frozen=True)
class MatchResult:
    """Matching outcome of one frame in one view."""

    view: View
    frame_index: int
    true_positives: int
    false_positives: int
    false_negatives: int
    pairs: tuple[tuple[int, int, float], ...] = ()
    objects: tuple[ObjectOutcome, ...] = ()
    detection_categories: tuple[tuple[Category, bool], ...] = ()

    @property
    def ious(self) -> list[float]:
        return [value for _, _, value in self.pairs]


def _threshold(label: ObjectLabel, iou_threshold: float, strict: bool) -> float:
    if not strict:
        return iou_threshold
    return EvalDefaults.STRICT_CAR_IOU if label.category == Category.CAR else EvalDefaults.STRICT_OTHER_IOU


def match_detections(
    detections: Sequence[Detection | Box3D],
    labels: Sequence[ObjectLabel],
    iou_threshold: float = EvalDefaults.IOU_THRESHOLD,
    mode: View = "bev",
    calibration: CameraCalibration | None = None,
    strict: bool = False,
    frame_index: int = 0,
) -> MatchResult:
    """Greedily match detections of one frame to its moving ground truth.

    Pairs are taken in descending IoU order, ties broken by detection index
    then label index; a pair matches when its IoU reaches the threshold and
    neither side is matched yet. In the 2D view only objects whose projection
    falls inside the image take part.

    Args:
        detections: Detections or bare boxes of the frame
        labels: Ground-truth labels of the frame; stationary ones are ignored
        iou_threshold: Minimum IoU of a match
        mode: View of the comparison
        calibration: Camera calibration, required by the 2D view
        strict: Use 0.7 for cars and 0.5 for other categories instead of ``iou_threshold``
        frame_index: Frame recorded in the result

    Returns:
        Counts, matched pairs and per-object outcomes

    Raises:
        ValidationError: If the 2D view is requested without calibration
    """
    boxes = [item.box if isinstance(item, Detection) else item for item in detections]
    categories = [item.category if isinstance(item, Detection) else Category.OTHER for item in detections]
    moving = [label for label in labels if label.is_moving]

    if mode == "2d":
        if calibration is None:
            raise ValidationError("The 2D view needs a camera calibration.")
        det_rects = [calibration.project_box(box) for box in boxes]
        gt_rects = [calibration.project_box(label.box) for label in moving]
        kept_dets = [index for index, rect in enumerate(det_rects) if rect is not None]
        kept_gts = [index for index, rect in enumerate(gt_rects) if rect is not None]
    else:
        kept_dets = list(range(len(boxes)))
        kept_gts = list(range(len(moving)))

    candidates = []
    for det in kept_dets:
        for gt in kept_gts:
            if mode == "2d":
                value = rectangle_iou(det_rects[det], gt_rects[gt])  # type: ignore[arg-type]
            else:
                value = iou(boxes[det], moving[gt].box, mode)
            if value >= _threshold(moving[gt], iou_threshold, strict) and value > 0.0:
                candidates.append((-value, det, gt))
    candidates.sort()

    used_dets: set[int] = set()
    used_gts: set[int] = set()
    pairs = []
    for negative, det, gt in candidates:
        if det in used_dets or gt in used_gts:
            continue
        used_dets.add(det)
        used_gts.add(gt)
        pairs.append((det, gt, -negative))

    objects = tuple(ObjectOutcome(moving[gt].category, moving[gt].box.bev_distance, gt in used_gts) for gt in kept_gts)
    detection_categories = tuple((categories[det], det in used_dets) for det in kept_dets)
    return MatchResult(
        view=mode,
        frame_index=frame_index,
        true_positives=len(pairs),
        false_positives=len(kept_dets) - len(pairs),
        false_negatives=len(kept_gts) - len(pairs),
        pairs=tuple(pairs),
        objects=objects,
        detection_categories=detection_categories,
    )


@dataclass(frozen=True)
class Scores:
    """Precision, recall and F1 from pooled counts; ``degenerate`` marks a zero denominator."""

    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    degenerate: bool

    @classmethod
    def from_counts(cls, true_positives: int, false_positives: int, false_negatives: int) -> "Scores":
        detected = true_positives + false_positives
        relevant = true_positives + false_negatives
        precision = true_positives / detected if detected else 0.0
        recall = true_positives / relevant if relevant else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0.0 else 0.0
        degenerate = not detected or not relevant
        return cls(true_positives, false_positives, false_negatives, precision, recall, f1, degenerate)


@dataclass(frozen=True)
class MetricsReport:
    """Pooled metrics per view and category with recall-by-distance curves of the primary view."""

    views: dict[str, Scores | None]
    categories: dict[str, dict[str, Scores]]
    primary_view: str
    recall_curves: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    near_recall: float | None = None
    near_range: float = EvalDefaults.NEAR_RANGE

    @property
    def primary(self) -> Scores | None:
        return self.views.get(self.primary_view)

    @property
    def degenerate(self) -> bool:
        primary = self.primary
        return primary is None or primary.degenerate


def _category_scores(matches: Iterable[MatchResult]) -> dict[str, Scores]:
    counts: dict[Category, list[int]] = {category: [0, 0, 0] for category in Category}
    for match in matches:
        for outcome in match.objects:
            counts[outcome.category][0 if outcome.detected else 2] += 1
        for category, matched in match.detection_categories:
            if not matched:
                counts[category][1] += 1
    return {category.value: Scores.from_counts(*values) for category, values in counts.items() if any(values)}


def compute_metrics(
    matches: Sequence[MatchResult],
    bins: Sequence[float] | None = None,
    primary_view: View = "bev",
    near_range: float = EvalDefaults.NEAR_RANGE,
    available_views: Iterable[View] = ("bev", "3d"),
) -> MetricsReport:
    """Pool per-frame matches into a report.

    Args:
        matches: Per-frame results of any views
        bins: Distance bin upper bounds, 10 m bins to 60 m plus an open bin by default
        primary_view: View used for the distance curves and gating
        near_range: Distance of the near-range recall
        available_views: Views that were evaluated; a view without matches is reported with zero counts

    Returns:
        The report; views that were not evaluated map to None
    """
    if bins is None:
        bins = EvalConfig().distance_bins()
    evaluated = set(available_views) | {match.view for match in matches}
    views: dict[str, Scores | None] = {}
    categories: dict[str, dict[str, Scores]] = {}
    for view in VIEWS:
        if view not in evaluated:
            views[view] = None
            continue
        selected = [match for match in matches if match.view == view]
        views[view] = Scores.from_counts(
            sum(match.true_positives for match in selected),
            sum(match.false_positives for match in selected),
            sum(match.false_negatives for match in selected),
        )
        categories[view] = _category_scores(selected)

    primary = [match for match in matches if match.view == primary_view]
    curves = {"total": recall_by_distance(primary, bins)}
    for category in (Category.CAR, Category.PEDESTRIAN, Category.CYCLIST):
        curves[category.value] = recall_by_distance(primary, bins, category)
    return MetricsReport(views, categories, primary_view, curves, recall_within(primary, near_range), near_range)


def _outcomes(matches: Iterable[MatchResult], category: Category | None) -> list[ObjectOutcome]:
    return [
        outcome
        for match in matches
        for outcome in match.objects
        if category is None or outcome.category == category
    ]


def recall_by_distance(
    matches: Sequence[MatchResult], bins: Sequence[float], category: Category | None = None
) -> list[tuple[float, float]]:
    """Recall per distance bin.

    Bin ``i`` covers distances in ``(bins[i-1], bins[i]]``; the first bin starts at 0.
    Bins without ground truth are omitted.

    Args:
        matches: Per-frame results of one view
        bins: Strictly increasing upper bounds in meters
        category: Restrict to one category

    Returns:
        (upper bound, recall) pairs

    Raises:
        ValidationError: If the bins are not strictly increasing
    """
    if any(later <= earlier for earlier, later in zip(bins, bins[1:])):
        raise ValidationError(f"Distance bins must be strictly increasing (got {list(bins)}).")
    outcomes = _outcomes(matches, category)
    curve = []
    lower = -math.inf
    for upper in bins:
        inside = [outcome for outcome in outcomes if lower < outcome.distance <= upper]
        if inside:
            curve.append((float(upper), sum(outcome.detected for outcome in inside) / len(inside)))
        lower = upper
    return curve


def recall_within(
    matches: Sequence[MatchResult], max_distance: float, category: Category | None = None
) -> float | None:
    """Recall over objects no farther than ``max_distance``, None when there are none."""
    outcomes = [outcome for outcome in _outcomes(matches, category) if outcome.distance <= max_distance]
    if not outcomes:
        return None
    return sum(outcome.detected for outcome in outcomes) / len(outcomes)


def metrics_table(report: MetricsReport) -> Table:
    """Render the report as a rich table.

    Args:
        report: Metrics to render

    Returns:
        A table with one row per view and category
    """
    table = Table(title="Motion detection metrics")
    for column in ("View", "Category", "TP", "FP", "FN", "PRE", "REC", "F1"):
        table.add_column(column, justify="left" if column in ("View", "Category") else "right")
    for view, scores in report.views.items():
        if scores is None:
            table.add_row(view, "all", "-", "-", "-", "unavailable", "unavailable", "unavailable")
            continue
        rows = [("all", scores)] + sorted(report.categories.get(view, {}).items())
        for category, values in rows:
            table.add_row(
                view,
                category,
                str(values.true_positives),
                str(values.false_positives),
                str(values.false_negatives),
                f"{values.precision:.4f}",
                f"{values.recall:.4f}",
                f"{values.f1:.4f}",
            )
    if report.near_recall is not None:
        table.caption = f"Recall within {report.near_range:g} m: {report.near_recall:.4f}"
    return table
