"""
Ego-motion compensation, ground removal and bird's-eye-view voxelization.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .config import BevConfig, GroundConfig
from .errors import InternalConsistencyError, ValidationError
from .models import FloatArray, PointCloud, PoseRecord

logger = logging.getLogger(__name__)


def compensate_ego_motion(cloud: PointCloud, pose_prev: PoseRecord, pose_curr: PoseRecord) -> PointCloud:
    """Re-express a past scan in the current sensor frame.

    Every point p becomes ``T_curr^-1 * T_prev * p``; intensities are kept.

    Args:
        cloud: Scan recorded at ``pose_prev``
        pose_prev: Pose of the scan
        pose_curr: Pose of the current frame

    Returns:
        The compensated cloud with the same point count

    Raises:
        InternalConsistencyError: If the current pose is not invertible
    """
    if abs(np.linalg.det(pose_curr.matrix)) < 1e-12:
        raise InternalConsistencyError("Current pose is not invertible.")
    if np.array_equal(pose_prev.matrix, pose_curr.matrix):
        return PointCloud(cloud.points.copy())
    transform = pose_curr.inverse_matrix() @ pose_prev.matrix
    points = cloud.points.copy()
    points[:, :3] = cloud.xyz @ transform[:3, :3].T + transform[:3, 3]
    return PointCloud(points)


def ground_mask(cloud: PointCloud, params: GroundConfig) -> npt.NDArray[np.bool_]:
    """Classify points as ground on a coarse height grid.

    The lowest point of each cell is accepted as ground when it rises no more
    than the configured slope allows above the lowest point of its window.
    Cells without an accepted estimate borrow the mean of accepted neighbors.

    Args:
        cloud: Input scan
        params: Ground removal parameters

    Returns:
        Boolean mask, True for ground points
    """
    if not len(cloud):
        return np.zeros(0, dtype=bool)
    xy = cloud.xyz[:, :2]
    z = cloud.xyz[:, 2]
    origin = xy.min(axis=0)
    cells = np.floor((xy - origin) / params.cell_size).astype(np.intp)
    shape = tuple(int(size) for size in cells.max(axis=0) + 1)
    lowest = np.full(shape, np.inf)
    np.minimum.at(lowest, (cells[:, 0], cells[:, 1]), z)

    size = 2 * params.window + 1
    reference = ndimage.minimum_filter(lowest, size=size, mode="constant", cval=np.inf)
    tolerance = params.window * params.cell_size * math.tan(math.radians(params.max_slope_deg))
    with np.errstate(invalid="ignore", divide="ignore"):
        accepted = np.isfinite(lowest) & (lowest - reference <= tolerance)
        weights = ndimage.uniform_filter(accepted.astype(np.float64), size=size, mode="constant")
        sums = ndimage.uniform_filter(np.where(accepted, lowest, 0.0), size=size, mode="constant")
        borrowed = np.where(weights > 1e-12, sums / weights, reference)
    surface = np.where(accepted, lowest, borrowed)

    ground = surface[cells[:, 0], cells[:, 1]]
    return np.asarray(z - ground <= params.height_threshold)


def remove_ground(cloud: PointCloud, params: GroundConfig | None = None) -> PointCloud:
    """Drop ground points.

    Args:
        cloud: Input scan
        params: Ground removal parameters, defaults when omitted

    Returns:
        The non-ground points in their original order
    """
    params = params or GroundConfig()
    if not len(cloud):
        return PointCloud.empty()
    mask = ground_mask(cloud, params)
    logger.debug("Removed %d of %d points as ground.", int(mask.sum()), len(cloud))
    return cloud.subset(~mask)


@dataclass(frozen=True, eq=False)
class BevMaps:
    """Co-registered bird's-eye-view grids of one scan.

    ``z_min`` and ``z_max`` hold the per-cell height band and are zero where unoccupied.
    """

    occupancy: FloatArray
    height: FloatArray
    gaussian: FloatArray
    z_min: FloatArray
    z_max: FloatArray
    dropped: int = 0

    def __post_init__(self) -> None:
        self.clean()

    def clean(self) -> None:
        """Validate grid registration.

        Raises:
            ValidationError: If the grids differ in shape
        """
        shape = self.occupancy.shape
        for name in ("height", "gaussian", "z_min", "z_max"):
            if getattr(self, name).shape != shape:
                raise ValidationError(f"BEV grid {name} has shape {getattr(self, name).shape}, expected {shape}.")

    @property
    def shape(self) -> tuple[int, int]:
        rows, cols = self.occupancy.shape
        return (rows, cols)

    @property
    def occupied(self) -> npt.NDArray[np.bool_]:
        return self.occupancy > 0.5

    @classmethod
    def empty(cls, config: BevConfig) -> "BevMaps":
        zeros = np.zeros(config.shape)
        return cls(zeros, zeros.copy(), zeros.copy(), zeros.copy(), zeros.copy())


def voxelize_bev(cloud: PointCloud, config: BevConfig) -> BevMaps:
    """Project a scan onto the occupancy, mean-height and Gaussian grids.

    Args:
        cloud: Ground-removed, ego-compensated scan
        config: Grid geometry

    Returns:
        The maps; points outside the grid are counted in ``dropped``
    """
    rows, cols = config.cell_indices(cloud.xyz[:, :2])
    inside = config.inside(rows, cols)
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        logger.debug("Dropped %d points outside the grid.", dropped)
    rows, cols, z = rows[inside], cols[inside], cloud.xyz[inside, 2]

    counts = np.zeros(config.shape)
    sums = np.zeros(config.shape)
    np.add.at(counts, (rows, cols), 1.0)
    np.add.at(sums, (rows, cols), z)
    occupied = counts > 0
    occupancy = occupied.astype(np.float64)
    height = np.divide(sums, counts, out=np.zeros(config.shape), where=occupied)

    z_min = np.full(config.shape, np.inf)
    z_max = np.full(config.shape, -np.inf)
    np.minimum.at(z_min, (rows, cols), z)
    np.maximum.at(z_max, (rows, cols), z)
    z_min[~occupied] = 0.0
    z_max[~occupied] = 0.0

    gaussian = ndimage.convolve(occupancy, config.gaussian_kernel(), mode="constant", cval=0.0)
    gaussian = np.clip(gaussian, 0.0, 1.0)
    return BevMaps(occupancy, height, gaussian, z_min, z_max, dropped)
