import math


class DefaultValues:
    """Default detector parameters of the EMD motion detection pipeline."""

    CELL_SIZE = 0.2
    GRID_ROWS = 200
    GRID_COLS = 350
    GRID_X_MIN = -10.0
    GAUSSIAN_SIZE = 5
    GAUSSIAN_SIGMA = 1.0
    TAU = 2.0
    MAX_DISTANCE = 10
    PATCH_SIZE = 21
    WEIGHTS = (0.1, 0.8, 0.1)
    FAST_SCORE_THRESHOLD = 0.0
    MOVING_MAGNITUDE_THRESHOLD = 1.0
    KERNEL_SIZE = 15
    KERNEL_CENTER = 0.56
    KERNEL_BORDER = -0.01
    FUSION_FRAMES = 3
    MAX_FUSION_FRAMES = 5
    LOWPASS_WINDOW = 4
    CADENCE = 10.0


class GroundDefaults:
    """Default parameters of the grid-based ground removal."""

    CELL_SIZE = 1.0
    WINDOW = 2
    MAX_SLOPE_DEG = 15.0
    HEIGHT_THRESHOLD = 0.25


class ClusterDefaults:
    """Default parameters of moving-cell clustering and proposal extraction."""

    MAX_ANGLE_DEG = 45.0
    MAX_MAGNITUDE_RATIO = 0.5
    MIN_CELLS = 2
    EXPANSION = 1


class BoxFitDefaults:
    """Default parameters of the geometric box estimator."""

    CENTER_ANGLES = (0.0, math.pi / 6, math.pi / 3)
    REFINE_SPAN_DEG = 15
    REFINE_STEP_DEG = 1.0
    MIN_EXTENT = 0.1


class EvalDefaults:
    """Default evaluation thresholds."""

    IOU_THRESHOLD = 0.5
    STRICT_CAR_IOU = 0.7
    STRICT_OTHER_IOU = 0.5
    DISTANCE_BIN = 10.0
    MAX_DISTANCE = 60.0
    NEAR_RANGE = 30.0


class SizePriors:
    """Mean (h, w, l) box sizes in meters per category."""

    CAR = (1.56, 1.6, 3.9)
    PEDESTRIAN = (1.73, 0.6, 0.8)
    CYCLIST = (1.73, 0.6, 1.76)


class Geodesy:
    """Constants of the Mercator pose projection."""

    EARTH_RADIUS = 6378137.0


class ValidationMessages:
    """Standard validation error messages."""

    KERNEL_IDENTITY = "Inhibition kernel must satisfy p + 4(l-1)q = 0 (got p={p}, l={l}, q={q})."
    WEIGHTS_SUM = "Energy weights must be non-negative and sum to 1 (got {weights})."
    ODD_SIZE = "{name} must be odd (got {value})."
    POSITIVE = "{name} must be positive (got {value})."
    UNKNOWN_KEY = "Unknown configuration key: {key}"
