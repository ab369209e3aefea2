"""Unit tests for emdmotion.const module."""

import math

from emdmotion.const import BoxFitDefaults, ClusterDefaults, DefaultValues, EvalDefaults, ValidationMessages


class TestDefaultValues:
    """Test cases for DefaultValues class."""

    def test_grid_defaults(self) -> None:
        """Test the default grid covers 40 m by 70 m at 0.2 m cells."""
        assert DefaultValues.CELL_SIZE == 0.2
        assert DefaultValues.GRID_ROWS * DefaultValues.CELL_SIZE == 40.0
        assert math.isclose(DefaultValues.GRID_COLS * DefaultValues.CELL_SIZE, 70.0)

    def test_detector_defaults(self) -> None:
        """Test the default detector parameters."""
        assert DefaultValues.TAU == 2.0
        assert DefaultValues.MAX_DISTANCE == 10
        assert DefaultValues.PATCH_SIZE == 21
        assert DefaultValues.WEIGHTS == (0.1, 0.8, 0.1)
        assert DefaultValues.FUSION_FRAMES == 3

    def test_kernel_defaults_sum_to_zero(self) -> None:
        """Test the default inhibition kernel satisfies its zero-sum identity."""
        total = DefaultValues.KERNEL_CENTER + 4 * (DefaultValues.KERNEL_SIZE - 1) * DefaultValues.KERNEL_BORDER
        assert abs(total) < 1e-12


class TestOtherDefaults:
    """Test cases for the remaining grouping classes."""

    def test_cluster_defaults(self) -> None:
        """Test clustering thresholds."""
        assert ClusterDefaults.MAX_ANGLE_DEG == 45.0
        assert ClusterDefaults.MAX_MAGNITUDE_RATIO == 0.5

    def test_center_angles(self) -> None:
        """Test the center estimator rotates by 0, 30 and 60 degrees."""
        assert [round(math.degrees(angle)) for angle in BoxFitDefaults.CENTER_ANGLES] == [0, 30, 60]

    def test_eval_defaults(self) -> None:
        """Test evaluation thresholds."""
        assert EvalDefaults.IOU_THRESHOLD == 0.5
        assert EvalDefaults.STRICT_CAR_IOU == 0.7
        assert EvalDefaults.NEAR_RANGE == 30.0

    def test_validation_message_formatting(self) -> None:
        """Test message templates format their placeholders."""
        message = ValidationMessages.ODD_SIZE.format(name="patch", value=4)
        assert message == "patch must be odd (got 4)."
