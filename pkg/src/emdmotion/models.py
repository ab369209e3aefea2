"""
Domain models shared across the pipeline.

Every model validates itself on construction through ``clean()`` so that an
object violating its invariants cannot exist.
"""

import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from .errors import ValidationError

FloatArray = npt.NDArray[np.float64]


class Category(StrEnum):
    """Object categories carried by labels and detections."""

    CAR = "car"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    OTHER = "other"

    @classmethod
    def parse(cls, value: str) -> "Category":
        """Parse a category name, mapping unknown names to OTHER.

        Args:
            value: Category name, case insensitive

        Returns:
            The matching category
        """
        try:
            return cls(value.strip().lower())
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True, eq=False)
class PointCloud:
    """A set of Lidar points stored as an ``(N, 4)`` array of x, y, z, intensity."""

    points: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 4))
        self.clean()

    def clean(self) -> None:
        """Validate point coordinates and intensities.

        Raises:
            ValidationError: If any value is non-finite or an intensity lies outside [0, 1]
        """
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("Point cloud contains non-finite values.")
        intensity = self.points[:, 3]
        if intensity.size and (intensity.min() < 0.0 or intensity.max() > 1.0):
            raise ValidationError("Point intensities must lie in [0, 1].")

    @classmethod
    def empty(cls) -> "PointCloud":
        """Create a cloud without points.

        Returns:
            An empty point cloud
        """
        return cls(np.zeros((0, 4)))

    @classmethod
    def from_xyz(cls, xyz: npt.ArrayLike, intensity: npt.ArrayLike | None = None) -> "PointCloud":
        """Build a cloud from coordinates and optional intensities.

        Args:
            xyz: ``(N, 3)`` coordinates in meters
            intensity: ``(N,)`` intensities, zeros when omitted

        Returns:
            The point cloud
        """
        coords = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        values = np.zeros(len(coords)) if intensity is None else np.asarray(intensity, dtype=np.float64)
        return cls(np.column_stack([coords, values]))

    @property
    def xyz(self) -> FloatArray:
        return self.points[:, :3]

    @property
    def intensity(self) -> FloatArray:
        return self.points[:, 3]

    def subset(self, mask: npt.NDArray[np.bool_]) -> "PointCloud":
        """Select points by boolean mask.

        Args:
            mask: Boolean array with one entry per point

        Returns:
            A new cloud holding the selected points in their original order
        """
        return PointCloud(self.points[mask])

    def concatenate(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(np.vstack([self.points, other.points]))

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True, eq=False)
class PoseRecord:
    """Homogeneous transform from the Lidar frame to the Earth-anchored frame."""

    timestamp: float
    matrix: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", np.array(self.matrix, dtype=np.float64).reshape(4, 4))
        self.clean()

    def clean(self) -> None:
        """Validate the rigid-transform structure.

        Raises:
            ValidationError: If the rotation block is not a proper rotation or the last row is not (0, 0, 0, 1)
        """
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("Pose matrix contains non-finite values.")
        rotation = self.matrix[:3, :3]
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6, rtol=0.0):
            raise ValidationError("Pose rotation block is not orthonormal.")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-6:
            raise ValidationError("Pose rotation determinant must be +1.")
        if not np.array_equal(self.matrix[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValidationError("Pose last row must be (0, 0, 0, 1).")

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "PoseRecord":
        return cls(timestamp, np.eye(4))

    @classmethod
    def from_planar(cls, timestamp: float, x: float, y: float, yaw: float, z: float = 0.0) -> "PoseRecord":
        """Build a pose from a planar position and heading.

        Args:
            timestamp: Time in seconds
            x: Position along x in meters
            y: Position along y in meters
            yaw: Heading in radians, counterclockwise about z
            z: Height in meters

        Returns:
            The pose record
        """
        cos_yaw, sin_yaw = math.cos(yaw), math.sin(yaw)
        matrix = np.array(
            [
                [cos_yaw, -sin_yaw, 0.0, x],
                [sin_yaw, cos_yaw, 0.0, y],
                [0.0, 0.0, 1.0, z],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        return cls(timestamp, matrix)

    @property
    def rotation(self) -> FloatArray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> FloatArray:
        return self.matrix[:3, 3]

    @property
    def yaw(self) -> float:
        return math.atan2(float(self.matrix[1, 0]), float(self.matrix[0, 0]))

    def inverse_matrix(self) -> FloatArray:
        """Closed-form inverse of the rigid transform.

        Returns:
            The ``(4, 4)`` inverse matrix
        """
        inverse = np.eye(4)
        inverse[:3, :3] = self.rotation.T
        inverse[:3, 3] = -self.rotation.T @ self.translation
        return inverse

    def relative_to(self, other: "PoseRecord") -> FloatArray:
        """Transform mapping this pose's frame into ``other``'s frame.

        Args:
            other: Target pose

        Returns:
            ``other^-1 * self`` as a ``(4, 4)`` matrix
        """
        return other.inverse_matrix() @ self.matrix


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box; yaw is the heading of the length axis in [0, pi)."""

    center: tuple[float, float, float]
    h: float
    w: float
    l: float  # noqa: E741
    yaw: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(value) for value in self.center))
        yaw = math.fmod(float(self.yaw), math.pi)
        if yaw < 0.0:
            yaw += math.pi
        if yaw >= math.pi:
            yaw = 0.0
        object.__setattr__(self, "yaw", yaw)
        self.clean()

    def clean(self) -> None:
        """Validate box dimensions.

        Raises:
            ValidationError: If a dimension is not strictly positive or a value is not finite
        """
        if len(self.center) != 3 or not all(math.isfinite(value) for value in self.center):
            raise ValidationError("Box center must be three finite coordinates.")
        for name, value in (("h", self.h), ("w", self.w), ("l", self.l)):
            if not math.isfinite(value) or value <= 0.0:
                raise ValidationError(f"Box dimension {name} must be strictly positive (got {value}).")

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def z_min(self) -> float:
        return self.center[2] - self.h / 2.0

    @property
    def z_max(self) -> float:
        return self.center[2] + self.h / 2.0

    @property
    def bev_distance(self) -> float:
        return math.hypot(self.center[0], self.center[1])

    def corners_bev(self) -> FloatArray:
        """Corners of the box footprint, counterclockwise.

        Returns:
            ``(4, 2)`` array of x, y corner coordinates
        """
        cos_yaw, sin_yaw = math.cos(self.yaw), math.sin(self.yaw)
        half = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]) * [self.l / 2.0, self.w / 2.0]
        rotation = np.array([[cos_yaw, -sin_yaw], [sin_yaw, cos_yaw]])
        return half @ rotation.T + np.array(self.center[:2])

    def corners_3d(self) -> FloatArray:
        """All eight box corners.

        Returns:
            ``(8, 3)`` array, bottom face first
        """
        footprint = self.corners_bev()
        bottom = np.column_stack([footprint, np.full(4, self.z_min)])
        top = np.column_stack([footprint, np.full(4, self.z_max)])
        return np.vstack([bottom, top])

    def contains_bev(self, xy: FloatArray, margin: float = 0.0) -> npt.NDArray[np.bool_]:
        """Check which points fall inside the (optionally enlarged) footprint.

        Args:
            xy: ``(N, 2)`` coordinates
            margin: Enlargement of every side in meters

        Returns:
            Boolean mask with one entry per point
        """
        cos_yaw, sin_yaw = math.cos(self.yaw), math.sin(self.yaw)
        local = np.asarray(xy, dtype=np.float64) - np.array(self.center[:2])
        along = local[:, 0] * cos_yaw + local[:, 1] * sin_yaw
        across = -local[:, 0] * sin_yaw + local[:, 1] * cos_yaw
        return (np.abs(along) <= self.l / 2.0 + margin) & (np.abs(across) <= self.w / 2.0 + margin)


@dataclass(frozen=True)
class ObjectLabel:
    """Ground-truth object of one frame."""

    frame_index: int
    category: Category
    box: Box3D
    track_id: int
    is_moving: bool

    def __post_init__(self) -> None:
        self.clean()

    def clean(self) -> None:
        """Validate label indices.

        Raises:
            ValidationError: If the frame index is negative
        """
        if self.frame_index < 0:
            raise ValidationError(f"Frame index must be non-negative (got {self.frame_index}).")


@dataclass(frozen=True)
class Detection:
    """A moving object reported by the pipeline for one frame."""

    frame_index: int
    category: Category
    box: Box3D
    speed: float

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError(f"Frame index must be non-negative (got {self.frame_index}).")


@dataclass(frozen=True, eq=False)
class Frame:
    """One sensor frame: scan, pose and ground-truth labels."""

    cloud: PointCloud
    pose: PoseRecord
    labels: tuple[ObjectLabel, ...] = ()


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Ordered frames recorded at a fixed cadence."""

    frames: tuple[Frame, ...]
    cadence: float
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        self.clean()

    def clean(self) -> None:
        """Validate cadence and timestamp ordering.

        Raises:
            ValidationError: If the cadence is not positive or timestamps are not strictly increasing
        """
        if not self.cadence > 0.0:
            raise ValidationError(f"Cadence must be positive (got {self.cadence}).")
        timestamps = [frame.pose.timestamp for frame in self.frames]
        if any(later <= earlier for earlier, later in zip(timestamps, timestamps[1:])):
            raise ValidationError("Frame timestamps must be strictly increasing.")

    @property
    def labels(self) -> list[ObjectLabel]:
        return [label for frame in self.frames for label in frame.labels]

    def __len__(self) -> int:
        return len(self.frames)
