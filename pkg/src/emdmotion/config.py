"""
Configuration objects of the pipeline.

Each section is a frozen dataclass validated by ``clean()`` on construction.
``PipelineConfig`` aggregates the sections and loads them from YAML, rejecting
unknown keys so that typos never silently fall back to defaults.
"""

import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
import yaml

from .const import (
    BoxFitDefaults,
    ClusterDefaults,
    DefaultValues,
    EvalDefaults,
    GroundDefaults,
    ValidationMessages,
)
from .errors import ConfigurationError

Strategy = Literal["c2f", "exhaustive", "coarse"]
Connections = Literal["both", "horizontal", "vertical"]
View = Literal["bev", "3d", "2d"]


def _require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigurationError(ValidationMessages.POSITIVE.format(name=name, value=value), key=name)


def _require_odd(name: str, value: int) -> None:
    if value % 2 != 1:
        raise ConfigurationError(ValidationMessages.ODD_SIZE.format(name=name, value=value), key=name)


@dataclass(frozen=True)
class BevConfig:
    """Bird's-eye-view grid geometry; rows run along y, columns along x."""

    cell_size: float = DefaultValues.CELL_SIZE
    rows: int = DefaultValues.GRID_ROWS
    cols: int = DefaultValues.GRID_COLS
    x_min: float = DefaultValues.GRID_X_MIN
    y_min: float | None = None
    gaussian_size: int = DefaultValues.GAUSSIAN_SIZE
    gaussian_sigma: float = DefaultValues.GAUSSIAN_SIGMA

    def __post_init__(self) -> None:
        self.clean()

    def clean(self) -> None:
        """Validate grid geometry.

        Raises:
            ConfigurationError: If a size is not positive or the Gaussian kernel size is even
        """
        _require_positive("cell_size", self.cell_size)
        _require_positive("rows", self.rows)
        _require_positive("cols", self.cols)
        _require_positive("gaussian_sigma", self.gaussian_sigma)
        _require_odd("gaussian_size", self.gaussian_size)

    @property
    def y_origin(self) -> float:
        """Lower y bound of the grid; the sensor sits on the middle row by default."""
        return self.y_min if self.y_min is not None else -self.rows * self.cell_size / 2.0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell_indices(self, xy: npt.NDArray[np.float64]) -> tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]]:
        """Map metric coordinates to (row, col) indices, which may fall outside the grid.

        Args:
            xy: ``(N, 2)`` coordinates in meters

        Returns:
            Row and column index arrays
        """
        cols = np.floor((xy[:, 0] - self.x_min) / self.cell_size).astype(np.intp)
        rows = np.floor((xy[:, 1] - self.y_origin) / self.cell_size).astype(np.intp)
        return rows, cols

    def inside(self, rows: npt.NDArray[np.intp], cols: npt.NDArray[np.intp]) -> npt.NDArray[np.bool_]:
        return (rows >= 0) & (rows < self.rows) & (cols >= 0) & (cols < self.cols)

    def cell_center(self, row: float, col: float) -> tuple[float, float]:
        """Metric center of a cell.

        Args:
            row: Row index
            col: Column index

        Returns:
            The (x, y) center in meters
        """
        return (self.x_min + (col + 0.5) * self.cell_size, self.y_origin + (row + 0.5) * self.cell_size)

    def gaussian_kernel(self) -> npt.NDArray[np.float64]:
        """Normalized square Gaussian kernel.

        Returns:
            ``(size, size)`` kernel summing to 1
        """
        radius = self.gaussian_size // 2
        axis = np.arange(-radius, radius + 1, dtype=np.float64)
        profile = np.exp(-(axis**2) / (2.0 * self.gaussian_sigma**2))
        kernel = np.outer(profile, profile)
        return kernel / kernel.sum()


@dataclass(frozen=True)
class GroundConfig:
    """Parameters of the grid-based ground removal."""

    cell_size: float = GroundDefaults.CELL_SIZE
    window: int = GroundDefaults.WINDOW
    max_slope_deg: float = GroundDefaults.MAX_SLOPE_DEG
    height_threshold: float = GroundDefaults.HEIGHT_THRESHOLD

    def __post_init__(self) -> None:
        _require_positive("ground.cell_size", self.cell_size)
        _require_positive("ground.window", self.window)
        _require_positive("ground.height_threshold", self.height_threshold)
        if not 0.0 <= self.max_slope_deg < 90.0:
            raise ConfigurationError("max slope must lie in [0, 90) degrees", key="ground.max_slope_deg")


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of the fast-search and exact-match stages."""

    max_distance: int = DefaultValues.MAX_DISTANCE
    patch_size: int = DefaultValues.PATCH_SIZE
    weights: tuple[float, float, float] = DefaultValues.WEIGHTS
    fast_score_threshold: float = DefaultValues.FAST_SCORE_THRESHOLD
    moving_magnitude_threshold: float = DefaultValues.MOVING_MAGNITUDE_THRESHOLD
    tau: float = DefaultValues.TAU
    strategy: Strategy = "c2f"
    connections: Connections = "both"

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(weight) for weight in self.weights))
        self.clean()

    def clean(self) -> None:
        """Validate search parameters.

        Raises:
            ConfigurationError: If any parameter violates its invariant
        """
        if self.max_distance < 1:
            raise ConfigurationError(f"R must be at least 1 (got {self.max_distance})", key="search.max_distance")
        if self.patch_size < 3:
            raise ConfigurationError(f"patch size must be at least 3 (got {self.patch_size})", key="search.patch_size")
        _require_odd("search.patch_size", self.patch_size)
        if len(self.weights) != 3 or min(self.weights) < 0.0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigurationError(ValidationMessages.WEIGHTS_SUM.format(weights=self.weights), key="search.weights")
        _require_positive("search.tau", self.tau)
        if self.moving_magnitude_threshold < 0.0:
            raise ConfigurationError("threshold must be non-negative", key="search.moving_magnitude_threshold")
        if self.strategy not in typing.get_args(Strategy):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}", key="search.strategy")
        if self.connections not in typing.get_args(Connections):
            raise ConfigurationError(f"unknown connections {self.connections!r}", key="search.connections")


@dataclass(frozen=True)
class InhibitionKernel:
    """Zero-sum ring kernel of the lateral inhibition stage."""

    size: int = DefaultValues.KERNEL_SIZE
    center: float = DefaultValues.KERNEL_CENTER
    border: float = DefaultValues.KERNEL_BORDER

    def __post_init__(self) -> None:
        self.clean()

    def clean(self) -> None:
        """Validate the kernel identity.

        Raises:
            ConfigurationError: If the size is even or below 3, or the entries do not sum to zero
        """
        if self.size < 3:
            raise ConfigurationError(f"kernel size must be at least 3 (got {self.size})", key="inhibition.size")
        _require_odd("inhibition.size", self.size)
        if abs(self.center + 4 * (self.size - 1) * self.border) > 1e-9:
            raise ConfigurationError(
                ValidationMessages.KERNEL_IDENTITY.format(p=self.center, l=self.size, q=self.border),
                key="inhibition",
            )

    def matrix(self) -> npt.NDArray[np.float64]:
        """Materialize the kernel.

        Returns:
            ``(size, size)`` array with the border weight on the outer ring and the center weight in the middle
        """
        kernel = np.zeros((self.size, self.size))
        kernel[0, :] = kernel[-1, :] = kernel[:, 0] = kernel[:, -1] = self.border
        kernel[self.size // 2, self.size // 2] = self.center
        return kernel


@dataclass(frozen=True)
class FusionConfig:
    """Multi-frame fusion parameters."""

    num_frames: int = DefaultValues.FUSION_FRAMES
    normalize: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.num_frames <= DefaultValues.MAX_FUSION_FRAMES:
            raise ConfigurationError(
                f"K must lie in [1, {DefaultValues.MAX_FUSION_FRAMES}] (got {self.num_frames})",
                key="fusion.num_frames",
            )


@dataclass(frozen=True)
class ClusterConfig:
    """Clustering and proposal extraction parameters."""

    max_angle_deg: float = ClusterDefaults.MAX_ANGLE_DEG
    max_magnitude_ratio: float = ClusterDefaults.MAX_MAGNITUDE_RATIO
    min_cells: int = ClusterDefaults.MIN_CELLS
    expansion: int = ClusterDefaults.EXPANSION

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_angle_deg <= 180.0:
            raise ConfigurationError("angle must lie in [0, 180]", key="cluster.max_angle_deg")
        if not 0.0 <= self.max_magnitude_ratio <= 1.0:
            raise ConfigurationError("ratio must lie in [0, 1]", key="cluster.max_magnitude_ratio")
        _require_positive("cluster.min_cells", self.min_cells)
        if self.expansion < 0:
            raise ConfigurationError("expansion must be non-negative", key="cluster.expansion")


@dataclass(frozen=True)
class BoxFitConfig:
    """Geometric box estimator parameters."""

    refine_span_deg: int = BoxFitDefaults.REFINE_SPAN_DEG
    refine_step_deg: float = BoxFitDefaults.REFINE_STEP_DEG
    min_extent: float = BoxFitDefaults.MIN_EXTENT
    use_hull_angles: bool = True

    def __post_init__(self) -> None:
        if self.refine_span_deg < 0:
            raise ConfigurationError("span must be non-negative", key="box.refine_span_deg")
        _require_positive("box.refine_step_deg", self.refine_step_deg)
        _require_positive("box.min_extent", self.min_extent)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation thresholds and gating."""

    iou_threshold: float = EvalDefaults.IOU_THRESHOLD
    mode: View = "bev"
    strict: bool = False
    distance_bin: float = EvalDefaults.DISTANCE_BIN
    max_distance: float = EvalDefaults.MAX_DISTANCE
    near_range: float = EvalDefaults.NEAR_RANGE
    min_precision: float = 0.0
    min_recall: float = 0.0

    def __post_init__(self) -> None:
        for name in ("iou_threshold", "min_precision", "min_recall"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"must lie in [0, 1] (got {value})", key=f"evaluation.{name}")
        if self.mode not in typing.get_args(View):
            raise ConfigurationError(f"unknown view {self.mode!r}", key="evaluation.mode")
        _require_positive("evaluation.distance_bin", self.distance_bin)
        _require_positive("evaluation.max_distance", self.max_distance)

    def distance_bins(self) -> list[float]:
        """Upper bounds of the recall-by-distance bins, ending with an open bin.

        Returns:
            Sorted bin upper bounds, the last one infinite
        """
        count = int(math.ceil(self.max_distance / self.distance_bin))
        return [self.distance_bin * (index + 1) for index in range(count)] + [math.inf]


@dataclass(frozen=True)
class IoConfig:
    """Input and output locations."""

    sequence: str | None = None
    labels: str | None = None
    detections: str | None = None
    output: str = "out"
    frames: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """Complete configuration of a pipeline run."""

    bev: BevConfig = field(default_factory=BevConfig)
    ground: GroundConfig = field(default_factory=GroundConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    inhibition: InhibitionKernel = field(default_factory=InhibitionKernel)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    box: BoxFitConfig = field(default_factory=BoxFitConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)
    cadence: float = DefaultValues.CADENCE
    lowpass_window: int = DefaultValues.LOWPASS_WINDOW
    workers: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        _require_positive("cadence", self.cadence)
        _require_positive("lowpass_window", self.lowpass_window)
        if self.workers is not None:
            _require_positive("workers", self.workers)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "PipelineConfig":
        """Build a configuration from nested mappings.

        Args:
            data: Parsed YAML mapping, sections may be omitted

        Returns:
            The validated configuration

        Raises:
            ConfigurationError: If a key is unknown or a value is invalid
        """
        return _build(cls, data or {}, "")

    @classmethod
    def from_yaml(cls, text: str) -> "PipelineConfig":
        loaded = yaml.safe_load(text)
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigurationError("configuration root must be a mapping")
        return cls.from_dict(loaded)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_yaml(Path(path).read_text(encoding="utf-8"))

    def to_dict(self) -> dict[str, Any]:
        """Effective configuration as plain YAML-safe data.

        Returns:
            Nested dictionary; tuples are emitted as lists
        """
        return typing.cast(dict[str, Any], _plain(dataclasses.asdict(self)))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        """SHA-256 of the canonical YAML dump."""
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def _build(cls: type[Any], data: dict[str, Any], prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigurationError("expected a mapping", key=prefix.rstrip(".") or None)
    hints = typing.get_type_hints(cls)
    names = {item.name for item in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigurationError(ValidationMessages.UNKNOWN_KEY.format(key=f"{prefix}{key}"), key=f"{prefix}{key}")
        hint = hints[key]
        if dataclasses.is_dataclass(hint) and isinstance(hint, type):
            kwargs[key] = _build(hint, value or {}, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc), key=prefix.rstrip(".") or None) from exc
