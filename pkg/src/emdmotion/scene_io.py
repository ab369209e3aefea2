"""
Readers and writers for scans, poses, labels, detections and sequence directories.

Scans use the KITTI velodyne layout: consecutive little-endian float32
quadruples (x, y, z, intensity). Poses use the KITTI oxts layout, of which the
first six fields (latitude, longitude, altitude, roll, pitch, yaw) are read.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from .const import Geodesy
from .errors import MalformedInputError, ValidationError
from .models import Box3D, Category, Detection, Frame, FrameSequence, ObjectLabel, PointCloud, PoseRecord

logger = logging.getLogger(__name__)

RECORD_SIZE = 16
SCAN_DTYPE = np.dtype("<f4")
OXTS_FIELDS = 30
POSE_FIELDS = 6

VELODYNE_DIR = "velodyne"
POSES_FILE = "poses.txt"
TIMESTAMPS_FILE = "timestamps.txt"
LABELS_FILE = "labels.txt"
MANIFEST_FILE = "manifest.yaml"

KITTI_CATEGORIES = {
    "car": Category.CAR,
    "van": Category.CAR,
    "pedestrian": Category.PEDESTRIAN,
    "person_sitting": Category.PEDESTRIAN,
    "cyclist": Category.CYCLIST,
}


def read_point_cloud(blob: bytes) -> PointCloud:
    """Decode a scan blob.

    Records holding a non-finite value are rejected with a counted warning.
    Intensities are clamped to [0, 1].

    Args:
        blob: Raw scan bytes

    Returns:
        One point per valid record, in file order

    Raises:
        MalformedInputError: If the blob length is not a multiple of the record size
    """
    remainder = len(blob) % RECORD_SIZE
    if remainder:
        offset = len(blob) - remainder
        raise MalformedInputError(f"Truncated scan record at byte offset {offset}.", offset=offset)
    raw = np.frombuffer(blob, dtype=SCAN_DTYPE).reshape(-1, 4).astype(np.float64)
    finite = np.all(np.isfinite(raw), axis=1)
    rejected = int(np.count_nonzero(~finite))
    if rejected:
        logger.warning("Rejected %d non-finite scan records out of %d.", rejected, len(raw))
    points = raw[finite]
    points[:, 3] = np.clip(points[:, 3], 0.0, 1.0)
    return PointCloud(points)


def write_point_cloud(cloud: PointCloud) -> bytes:
    """Encode a cloud in the scan layout.

    Args:
        cloud: Point cloud to encode

    Returns:
        Raw scan bytes, bit-exact with ``read_point_cloud`` for float32 values
    """
    return cloud.points.astype(SCAN_DTYPE).tobytes()


def load_point_cloud(path: str | Path) -> PointCloud:
    return read_point_cloud(Path(path).read_bytes())


def save_point_cloud(path: str | Path, cloud: PointCloud) -> None:
    Path(path).write_bytes(write_point_cloud(cloud))


def _parse_fields(line: str, count: int, line_number: int | None = None) -> list[float]:
    tokens = line.split()
    if len(tokens) < count:
        raise MalformedInputError(
            f"Expected at least {count} fields, got {len(tokens)}.", field_index=len(tokens), line_number=line_number
        )
    values = []
    for index, token in enumerate(tokens[:count]):
        try:
            values.append(float(token))
        except ValueError as exc:
            raise MalformedInputError(
                f"Unparsable field {index}: {token!r}.", field_index=index, line_number=line_number
            ) from exc
    return values


def _rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return Rotation.from_euler("xyz", [roll, pitch, yaw]).as_matrix()


@dataclass(frozen=True)
class GeodeticReference:
    """Geodetic origin of a sequence; its record defines the Earth-anchored metric frame."""

    latitude: float
    longitude: float
    altitude: float
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"Latitude must lie in [-90, 90] (got {self.latitude}).")

    @classmethod
    def from_record(cls, record: str) -> "GeodeticReference":
        """Use a pose record as the origin.

        Args:
            record: Whitespace separated oxts line

        Returns:
            The reference
        """
        return cls(*_parse_fields(record, POSE_FIELDS))

    @property
    def scale(self) -> float:
        return math.cos(math.radians(self.latitude))

    def project(self, latitude: float, longitude: float, altitude: float) -> np.ndarray:
        """Mercator projection scaled at the origin latitude.

        Args:
            latitude: Degrees
            longitude: Degrees
            altitude: Meters

        Returns:
            Metric (x, y, z) coordinates
        """
        radius = self.scale * Geodesy.EARTH_RADIUS
        mx = radius * math.radians(longitude)
        my = radius * math.log(math.tan(math.pi / 4.0 + math.radians(latitude) / 2.0))
        return np.array([mx, my, altitude])

    def unproject(self, mx: float, my: float, mz: float) -> tuple[float, float, float]:
        radius = self.scale * Geodesy.EARTH_RADIUS
        longitude = math.degrees(mx / radius)
        latitude = math.degrees(2.0 * math.atan(math.exp(my / radius)) - math.pi / 2.0)
        return latitude, longitude, mz

    def absolute_matrix(self, values: Sequence[float]) -> np.ndarray:
        latitude, longitude, altitude, roll, pitch, yaw = values
        matrix = np.eye(4)
        matrix[:3, :3] = _rotation_matrix(roll, pitch, yaw)
        matrix[:3, 3] = self.project(latitude, longitude, altitude)
        return matrix

    def origin_matrix(self) -> np.ndarray:
        return self.absolute_matrix([self.latitude, self.longitude, self.altitude, self.roll, self.pitch, self.yaw])


def read_pose(
    record: str, origin: GeodeticReference, timestamp: float = 0.0, line_number: int | None = None
) -> PoseRecord:
    """Convert an oxts record into a pose relative to the origin.

    Args:
        record: Whitespace separated oxts line
        origin: Geodetic reference of the sequence
        timestamp: Time of the record in seconds
        line_number: Line number reported in errors

    Returns:
        Pose mapping sensor coordinates into the origin's metric frame

    Raises:
        MalformedInputError: If a field cannot be parsed
        ValidationError: If the latitude lies outside [-90, 90]
    """
    values = _parse_fields(record, POSE_FIELDS, line_number)
    if not -90.0 <= values[0] <= 90.0:
        raise ValidationError(f"Latitude must lie in [-90, 90] (got {values[0]}).")
    origin_matrix = origin.origin_matrix()
    inverse = np.eye(4)
    inverse[:3, :3] = origin_matrix[:3, :3].T
    inverse[:3, 3] = -origin_matrix[:3, :3].T @ origin_matrix[:3, 3]
    matrix = inverse @ origin.absolute_matrix(values)
    matrix[3] = (0.0, 0.0, 0.0, 1.0)
    return PoseRecord(timestamp, matrix)


def read_pose_file(path: str | Path, timestamps: Sequence[float]) -> tuple[list[PoseRecord], GeodeticReference]:
    """Read an oxts pose file; the first record defines the origin.

    Args:
        path: Pose file, one record per line
        timestamps: One timestamp per record

    Returns:
        The poses and the geodetic reference

    Raises:
        ValidationError: If the record and timestamp counts differ or the file is empty
    """
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise ValidationError(f"Pose file {path} is empty.")
    if len(lines) != len(timestamps):
        raise ValidationError(f"Pose file has {len(lines)} records but {len(timestamps)} timestamps were given.")
    origin = GeodeticReference(*_parse_fields(lines[0], POSE_FIELDS, 1))
    poses = [
        read_pose(line, origin, timestamp, number)
        for number, (line, timestamp) in enumerate(zip(lines, timestamps), start=1)
    ]
    return poses, origin


def format_pose_record(pose: PoseRecord, origin: GeodeticReference) -> str:
    """Render a pose as an oxts line, padding the unused fields with zeros.

    Args:
        pose: Pose relative to the origin
        origin: Geodetic reference of the sequence

    Returns:
        One oxts line without the newline
    """
    absolute = origin.origin_matrix() @ pose.matrix
    latitude, longitude, altitude = origin.unproject(*absolute[:3, 3])
    roll, pitch, yaw = Rotation.from_matrix(absolute[:3, :3]).as_euler("xyz")
    values = [latitude, longitude, altitude, roll, pitch, yaw] + [0.0] * (OXTS_FIELDS - POSE_FIELDS)
    return " ".join(repr(float(value)) for value in values)


def write_pose_file(path: str | Path, poses: Iterable[PoseRecord], origin: GeodeticReference) -> None:
    lines = [format_pose_record(pose, origin) for pose in poses]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _frames_header(line: str) -> int | None:
    tokens = line.lstrip("#").split()
    if len(tokens) == 2 and tokens[0] == "frames":
        return int(tokens[1])
    return None


def _content_lines(text: str) -> tuple[list[tuple[int, str]], int | None]:
    frames = None
    content = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            frames = _frames_header(stripped) if frames is None else frames
            continue
        content.append((number, stripped))
    return content, frames


def _parse_int(token: str, field_index: int, line_number: int) -> int:
    try:
        return int(token)
    except ValueError as exc:
        raise MalformedInputError(
            f"Unparsable integer field {field_index}: {token!r}.", field_index=field_index, line_number=line_number
        ) from exc


def parse_labels(text: str) -> tuple[list[ObjectLabel], int | None]:
    """Parse a label file.

    Each line holds ``frame track_id category h w l cx cy cz yaw is_moving``.

    Args:
        text: File content

    Returns:
        Labels in file order and the frame count from the ``# frames`` header, if any

    Raises:
        MalformedInputError: If a line cannot be parsed
    """
    content, frames = _content_lines(text)
    labels = []
    for number, line in content:
        tokens = line.split()
        if len(tokens) != 11:
            raise MalformedInputError(f"Expected 11 label fields, got {len(tokens)}.", line_number=number)
        frame = _parse_int(tokens[0], 0, number)
        track = _parse_int(tokens[1], 1, number)
        h, w, length, cx, cy, cz, yaw = _parse_fields(" ".join(tokens[3:10]), 7, number)
        moving = _parse_int(tokens[10], 10, number)
        try:
            box = Box3D((cx, cy, cz), h, w, length, yaw)
            labels.append(ObjectLabel(frame, Category.parse(tokens[2]), box, track, bool(moving)))
        except ValidationError as exc:
            raise MalformedInputError(f"Invalid label: {exc}", line_number=number) from exc
    return labels, frames


def format_labels(labels: Iterable[ObjectLabel], frames: int | None = None) -> str:
    lines = [] if frames is None else [f"# frames {frames}"]
    for label in labels:
        box = label.box
        values = (box.h, box.w, box.l, *box.center, box.yaw)
        lines.append(
            f"{label.frame_index} {label.track_id} {label.category.value} "
            + " ".join(repr(float(value)) for value in values)
            + f" {int(label.is_moving)}"
        )
    return "\n".join(lines) + "\n"


def load_labels(path: str | Path) -> tuple[list[ObjectLabel], int | None]:
    return parse_labels(Path(path).read_text(encoding="utf-8"))


def save_labels(path: str | Path, labels: Iterable[ObjectLabel], frames: int | None = None) -> None:
    Path(path).write_text(format_labels(labels, frames), encoding="utf-8")


def parse_detections(text: str) -> tuple[list[Detection], int | None]:
    """Parse a detection file.

    Each line holds ``frame category cx cy cz h w l yaw speed``.

    Args:
        text: File content

    Returns:
        Detections in file order and the frame count from the ``# frames`` header, if any

    Raises:
        MalformedInputError: If a line cannot be parsed
    """
    content, frames = _content_lines(text)
    detections = []
    for number, line in content:
        tokens = line.split()
        if len(tokens) != 10:
            raise MalformedInputError(f"Expected 10 detection fields, got {len(tokens)}.", line_number=number)
        frame = _parse_int(tokens[0], 0, number)
        cx, cy, cz, h, w, length, yaw, speed = _parse_fields(" ".join(tokens[2:]), 8, number)
        try:
            box = Box3D((cx, cy, cz), h, w, length, yaw)
            detections.append(Detection(frame, Category.parse(tokens[1]), box, speed))
        except ValidationError as exc:
            raise MalformedInputError(f"Invalid detection: {exc}", line_number=number) from exc
    return detections, frames


def format_detections(detections: Iterable[Detection], frames: int | None = None) -> str:
    lines = [] if frames is None else [f"# frames {frames}"]
    for detection in detections:
        box = detection.box
        values = (*box.center, box.h, box.w, box.l, box.yaw, detection.speed)
        lines.append(
            f"{detection.frame_index} {detection.category.value} " + " ".join(repr(float(value)) for value in values)
        )
    return "\n".join(lines) + "\n"


def load_detections(path: str | Path) -> tuple[list[Detection], int | None]:
    return parse_detections(Path(path).read_text(encoding="utf-8"))


def save_detections(path: str | Path, detections: Iterable[Detection], frames: int | None = None) -> None:
    Path(path).write_text(format_detections(detections, frames), encoding="utf-8")


def convert_kitti_tracking_labels(
    text: str,
    poses: Sequence[PoseRecord] | None = None,
    moving_displacement: float = 1.0,
) -> list[ObjectLabel]:
    """Convert KITTI tracking labels from the camera convention to the Lidar convention.

    The camera axes map to Lidar axes as x = z_cam, y = -x_cam, z = -y_cam. Box
    locations are bottom centers in KITTI and are raised by half the height.
    DontCare entries are skipped.

    Args:
        text: Content of a KITTI tracking label file
        poses: Per-frame poses; when given, a track is moving if its world
            center travels more than ``moving_displacement`` from its first
            appearance, otherwise every track is marked moving
        moving_displacement: Displacement threshold in meters

    Returns:
        Labels sorted by frame then track id

    Raises:
        MalformedInputError: If a line cannot be parsed
    """
    parsed: list[tuple[int, int, Category, Box3D]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < 17:
            raise MalformedInputError(f"Expected at least 17 KITTI fields, got {len(tokens)}.", line_number=number)
        if tokens[2] == "DontCare":
            continue
        frame = _parse_int(tokens[0], 0, number)
        track = _parse_int(tokens[1], 1, number)
        h, w, length, x_cam, y_cam, z_cam, rotation_y = _parse_fields(" ".join(tokens[10:17]), 7, number)
        box = Box3D((z_cam, -x_cam, -y_cam + h / 2.0), h, w, length, -rotation_y - math.pi / 2.0)
        parsed.append((frame, track, KITTI_CATEGORIES.get(tokens[2].lower(), Category.OTHER), box))

    moving_tracks = {track for _, track, _, _ in parsed}
    if poses is not None:
        first_seen: dict[int, np.ndarray] = {}
        moving_tracks = set()
        for frame, track, _, box in sorted(parsed, key=lambda item: item[0]):
            if frame >= len(poses):
                raise ValidationError(f"Label frame {frame} has no pose.")
            world = poses[frame].matrix @ np.array([box.center[0], box.center[1], box.center[2], 1.0])
            start = first_seen.setdefault(track, world[:3])
            if np.linalg.norm(world[:2] - start[:2]) > moving_displacement:
                moving_tracks.add(track)

    labels = [
        ObjectLabel(frame, category, box, track, track in moving_tracks) for frame, track, category, box in parsed
    ]
    return sorted(labels, key=lambda label: (label.frame_index, label.track_id))


def scan_path(directory: Path, index: int) -> Path:
    return directory / VELODYNE_DIR / f"{index:06d}.bin"


def missing_sequence_files(directory: str | Path) -> list[Path]:
    """List the required sequence files that do not exist.

    Args:
        directory: Sequence directory

    Returns:
        Missing paths, empty when the sequence is complete
    """
    root = Path(directory)
    required = [root / VELODYNE_DIR, root / POSES_FILE, root / TIMESTAMPS_FILE]
    return [path for path in required if not path.exists()]


def write_sequence(
    directory: str | Path,
    sequence: FrameSequence,
    origin: GeodeticReference,
    manifest: dict[str, Any] | None = None,
) -> None:
    """Write a sequence directory.

    Args:
        directory: Target directory, created when missing
        sequence: Frames to write
        origin: Geodetic reference used to render the poses
        manifest: Extra entries recorded in ``manifest.yaml``
    """
    root = Path(directory)
    (root / VELODYNE_DIR).mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(sequence.frames):
        save_point_cloud(scan_path(root, index), frame.cloud)
    write_pose_file(root / POSES_FILE, (frame.pose for frame in sequence.frames), origin)
    (root / TIMESTAMPS_FILE).write_text(
        "".join(f"{frame.pose.timestamp!r}\n" for frame in sequence.frames), encoding="utf-8"
    )
    save_labels(root / LABELS_FILE, sequence.labels, len(sequence))
    document = {
        "cadence": sequence.cadence,
        "frames": len(sequence),
        "origin": {"latitude": origin.latitude, "longitude": origin.longitude, "altitude": origin.altitude},
        **sequence.metadata,
        **(manifest or {}),
    }
    (root / MANIFEST_FILE).write_text(yaml.safe_dump(document, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %d frames to %s.", len(sequence), root)


def read_sequence(
    directory: str | Path, frames: range | None = None, default_cadence: float | None = None
) -> FrameSequence:
    """Read a sequence directory.

    Args:
        directory: Sequence directory
        frames: Frame indices to load, all frames when omitted
        default_cadence: Cadence used when the manifest does not record one

    Returns:
        The sequence; labels are re-indexed to the loaded frame positions

    Raises:
        ValidationError: If required files are missing or counts disagree
    """
    root = Path(directory)
    missing = missing_sequence_files(root)
    if missing:
        raise ValidationError("Missing input files: " + ", ".join(str(path) for path in missing))
    timestamp_text = (root / TIMESTAMPS_FILE).read_text(encoding="utf-8")
    timestamps = _parse_fields(timestamp_text, len(timestamp_text.split()))
    poses, _ = read_pose_file(root / POSES_FILE, timestamps)
    manifest: dict[str, Any] = {}
    if (root / MANIFEST_FILE).exists():
        manifest = yaml.safe_load((root / MANIFEST_FILE).read_text(encoding="utf-8")) or {}
    cadence = float(manifest.get("cadence", default_cadence or 0.0))
    if cadence <= 0.0:
        cadence = 1.0 / float(np.median(np.diff(timestamps))) if len(timestamps) > 1 else 1.0

    labels_by_frame: dict[int, list[ObjectLabel]] = {}
    if (root / LABELS_FILE).exists():
        for label in load_labels(root / LABELS_FILE)[0]:
            labels_by_frame.setdefault(label.frame_index, []).append(label)

    indices = range(len(poses)) if frames is None else frames
    loaded = []
    for position, index in enumerate(indices):
        if not 0 <= index < len(poses):
            raise ValidationError(f"Frame {index} outside the sequence of {len(poses)} frames.")
        path = scan_path(root, index)
        if not path.exists():
            raise ValidationError(f"Missing input files: {path}")
        labels = tuple(
            ObjectLabel(position, label.category, label.box, label.track_id, label.is_moving)
            for label in labels_by_frame.get(index, [])
        )
        loaded.append(Frame(load_point_cloud(path), poses[index], labels))
    metadata = {
        key: str(value)
        for key, value in manifest.items()
        if isinstance(value, (str, int, float)) and key not in ("cadence", "frames")
    }
    return FrameSequence(tuple(loaded), cadence, metadata)
