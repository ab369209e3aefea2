"""
Unit tests for emdmotion.evaluation.
"""

import math

import pytest
from rich.console import Console

from emdmotion.errors import ValidationError
from emdmotion.evaluation import (
    CameraCalibration,
    Scores,
    compute_metrics,
    match_detections,
    metrics_table,
    recall_by_distance,
    recall_within,
    rectangle_iou,
)
from emdmotion.models import Box3D, Category, Detection, ObjectLabel

CALIBRATION_TEXT = """P0: 1 0 0 0 0 1 0 0 0 0 1 0
P2: 700 0 621 0 0 700 187 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0
"""


def square(x: float, y: float = 0.0) -> Box3D:
    return Box3D((x, y, 0.0), 2.0, 2.0, 2.0, 0.0)


def label(box: Box3D, category: Category = Category.CAR, moving: bool = True, track: int = 1) -> ObjectLabel:
    return ObjectLabel(0, category, box, track, moving)


class TestMatchDetections:
    """Test cases for greedy matching."""

    def test_perfect_match(self, moving_labels, matching_detections) -> None:
        """Test detections on every moving object are all true positives."""
        result = match_detections(matching_detections, moving_labels)
        assert (result.true_positives, result.false_positives, result.false_negatives) == (2, 0, 0)
        assert result.ious == pytest.approx([1.0, 1.0])
        assert all(outcome.detected for outcome in result.objects)

    def test_stationary_object_is_false_positive(self, moving_labels) -> None:
        """Test a detection on a parked car counts against precision."""
        parked = moving_labels[2]
        result = match_detections([Detection(0, Category.CAR, parked.box, 1.0)], moving_labels)
        assert (result.true_positives, result.false_positives, result.false_negatives) == (0, 1, 2)

    def test_best_overlap_wins(self) -> None:
        """Test the higher overlap takes the label and the other detection is unmatched."""
        labels = [label(square(10.0))]
        result = match_detections([square(10.8), square(10.2)], labels)
        assert result.pairs[0][:2] == (1, 0)
        assert (result.true_positives, result.false_positives) == (1, 1)

    def test_ties_go_to_lowest_index(self) -> None:
        """Test equal overlaps are resolved by detection index."""
        result = match_detections([square(10.0), square(10.0)], [label(square(10.0))])
        assert result.pairs[0][:2] == (0, 0)

    def test_threshold(self) -> None:
        """Test a third of overlap is not enough at the default threshold."""
        result = match_detections([square(11.0)], [label(square(10.0))])
        assert result.true_positives == 0
        assert match_detections([square(11.0)], [label(square(10.0))], iou_threshold=0.3).true_positives == 1

    def test_strict_thresholds(self) -> None:
        """Test strict mode asks more overlap of cars than of pedestrians."""
        detection = [square(10.5)]
        assert match_detections(detection, [label(square(10.0))]).true_positives == 1
        assert match_detections(detection, [label(square(10.0))], strict=True).true_positives == 0
        pedestrian = [label(square(10.0), Category.PEDESTRIAN)]
        assert match_detections(detection, pedestrian, strict=True).true_positives == 1

    def test_three_dimensional_view(self) -> None:
        """Test the 3D view accounts for vertical offsets."""
        raised = Box3D((10.0, 0.0, 1.0), 2.0, 2.0, 2.0, 0.0)
        labels = [label(square(10.0))]
        assert match_detections([raised], labels, mode="bev").true_positives == 1
        assert match_detections([raised], labels, mode="3d").true_positives == 0

    def test_image_view_requires_calibration(self) -> None:
        """Test the 2D view cannot run without a calibration."""
        with pytest.raises(ValidationError):
            match_detections([square(10.0)], [label(square(10.0))], mode="2d")

    def test_image_view_ignores_objects_behind(self) -> None:
        """Test objects outside the camera view are not counted."""
        calibration = CameraCalibration.from_kitti(CALIBRATION_TEXT)
        labels = [label(square(10.0)), label(square(-10.0), track=2)]
        result = match_detections([square(10.0), square(-12.0)], labels, mode="2d", calibration=calibration)
        assert (result.true_positives, result.false_positives, result.false_negatives) == (1, 0, 0)
        assert len(result.objects) == 1


class TestCameraCalibration:
    """Test cases for the camera projection."""

    def test_project_box_in_front(self) -> None:
        """Test a box ahead projects around the principal point."""
        calibration = CameraCalibration.from_kitti(CALIBRATION_TEXT)
        left, top, right, bottom = calibration.project_box(square(10.0))
        assert (left, right) == pytest.approx((621.0 - 700.0 / 9.0, 621.0 + 700.0 / 9.0))
        assert (top, bottom) == pytest.approx((187.0 - 700.0 / 9.0, 187.0 + 700.0 / 9.0))

    def test_project_box_behind(self) -> None:
        """Test a box behind the camera has no image rectangle."""
        calibration = CameraCalibration.from_kitti(CALIBRATION_TEXT)
        assert calibration.project_box(square(-10.0)) is None

    def test_clipped_to_image(self) -> None:
        """Test a box close to the camera is clipped to the image."""
        calibration = CameraCalibration.from_kitti(CALIBRATION_TEXT)
        left, top, right, bottom = calibration.project_box(Box3D((3.0, 0.0, 0.0), 2.0, 8.0, 2.0, 0.0))
        assert (left, right) == (0.0, 1242.0)

    def test_missing_entries(self) -> None:
        """Test a calibration without the Lidar transform is rejected."""
        with pytest.raises(ValidationError):
            CameraCalibration.from_kitti("P2: 700 0 621 0 0 700 187 0 0 0 1 0\n")


class TestScores:
    """Test cases for pooled scores."""

    def test_from_counts(self) -> None:
        """Test precision, recall and F1 from counts."""
        scores = Scores.from_counts(3, 1, 2)
        assert scores.precision == pytest.approx(0.75)
        assert scores.recall == pytest.approx(0.6)
        assert scores.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
        assert not scores.degenerate

    def test_degenerate(self) -> None:
        """Test empty denominators yield zeros flagged degenerate."""
        scores = Scores.from_counts(0, 0, 0)
        assert (scores.precision, scores.recall, scores.f1) == (0.0, 0.0, 0.0)
        assert scores.degenerate
        assert Scores.from_counts(0, 0, 4).degenerate

    def test_rectangle_iou(self) -> None:
        """Test image rectangles shifted by half their width overlap by a third."""
        assert rectangle_iou((0.0, 0.0, 2.0, 2.0), (1.0, 0.0, 3.0, 2.0)) == pytest.approx(1.0 / 3.0)
        assert rectangle_iou((0.0, 0.0, 1.0, 1.0), (5.0, 5.0, 6.0, 6.0)) == 0.0


class TestMetrics:
    """Test cases for pooled metrics and distance curves."""

    @staticmethod
    def _matches(moving_labels, detections):
        return [match_detections(detections, moving_labels, mode=view) for view in ("bev", "3d")]

    def test_report(self, moving_labels, matching_detections) -> None:
        """Test views, categories and curves of a perfect frame."""
        report = compute_metrics(self._matches(moving_labels, matching_detections))
        assert report.primary.recall == 1.0
        assert report.views["3d"].true_positives == 2
        assert report.views["2d"] is None
        assert report.categories["bev"]["car"].true_positives == 2
        assert report.recall_curves["total"] == [(10.0, 1.0), (30.0, 1.0)]
        assert report.recall_curves["pedestrian"] == []
        assert report.near_recall == 1.0
        assert not report.degenerate

    def test_missed_far_object(self, moving_labels, matching_detections) -> None:
        """Test the distance curve locates a missed object."""
        report = compute_metrics(self._matches(moving_labels, matching_detections[:1]))
        assert report.recall_curves["total"] == [(10.0, 1.0), (30.0, 0.0)]
        assert report.primary.recall == 0.5
        assert report.near_recall == 0.5

    def test_empty_evaluation_is_degenerate(self) -> None:
        """Test a run without objects or detections is flagged."""
        report = compute_metrics([])
        assert report.degenerate
        assert report.near_recall is None

    def test_bins_must_increase(self) -> None:
        """Test unordered bins are rejected."""
        with pytest.raises(ValidationError):
            recall_by_distance([], [10.0, 10.0])

    def test_recall_within(self, moving_labels, matching_detections) -> None:
        """Test near-range recall by category."""
        matches = [match_detections(matching_detections[:1], moving_labels)]
        assert recall_within(matches, 15.0) == 1.0
        assert recall_within(matches, 30.0) == 0.5
        assert recall_within(matches, 5.0) is None
        assert recall_within(matches, 30.0, Category.CYCLIST) is None

    def test_table(self, moving_labels, matching_detections) -> None:
        """Test the rendered table lists every view and the near-range recall."""
        report = compute_metrics(self._matches(moving_labels, matching_detections))
        table = metrics_table(report)
        assert table.row_count == 5
        console = Console(width=120, record=True)
        console.print(table)
        text = console.export_text()
        assert "unavailable" in text
        assert "Recall within 30 m: 1.0000" in text
        assert math.isclose(report.near_range, 30.0)
