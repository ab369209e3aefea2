"""
Unit tests for emdmotion.scene_io.

The scan decoder and the pose reader are checked against independent
oracles: a struct-based decoder and the haversine distance.
"""

import logging
import math
import struct

import numpy as np
import pytest

from emdmotion.errors import MalformedInputError, ValidationError
from emdmotion.models import Box3D, Category, Detection, Frame, FrameSequence, ObjectLabel, PointCloud, PoseRecord
from emdmotion.scene_io import (
    GeodeticReference,
    convert_kitti_tracking_labels,
    format_detections,
    format_labels,
    missing_sequence_files,
    parse_detections,
    parse_labels,
    read_point_cloud,
    read_pose,
    read_pose_file,
    read_sequence,
    write_point_cloud,
    write_pose_file,
    write_sequence,
)


def _oxts(latitude: float, longitude: float, altitude: float = 100.0, yaw: float = 0.0) -> str:
    return " ".join(str(value) for value in [latitude, longitude, altitude, 0.0, 0.0, yaw] + [0.0] * 24)


def _haversine(first: tuple[float, float], second: tuple[float, float]) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (*first, *second))
    a = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6378137.0 * math.asin(math.sqrt(a))


class TestPointCloudCodec:
    """Test cases for the scan codec."""

    def test_matches_struct_decoder(self, rng) -> None:
        """Test decoding agrees with an independent struct decoder."""
        values = rng.uniform(-50.0, 50.0, (7, 4)).astype(np.float32)
        values[:, 3] = rng.uniform(0.0, 1.0, 7)
        blob = values.tobytes()
        decoded = read_point_cloud(blob)
        oracle = [struct.unpack_from("<4f", blob, offset) for offset in range(0, len(blob), 16)]
        assert np.array_equal(decoded.points, np.array(oracle, dtype=np.float64))

    def test_round_trip_bit_exact(self, small_cloud) -> None:
        """Test encoding a decoded scan reproduces its bytes."""
        blob = write_point_cloud(small_cloud)
        assert write_point_cloud(read_point_cloud(blob)) == blob

    def test_truncated_record_reports_offset(self) -> None:
        """Test a blob with a partial record is rejected with its byte offset."""
        with pytest.raises(MalformedInputError) as info:
            read_point_cloud(bytes(16 * 3 + 5))
        assert info.value.offset == 48

    def test_empty_blob(self) -> None:
        """Test an empty scan decodes to no points."""
        assert len(read_point_cloud(b"")) == 0

    def test_non_finite_records_rejected(self, caplog) -> None:
        """Test records with NaN are dropped with a warning."""
        values = np.array([[1.0, 2.0, 3.0, 0.5], [np.nan, 0.0, 0.0, 0.1], [4.0, 5.0, 6.0, 2.0]], dtype=np.float32)
        with caplog.at_level(logging.WARNING, logger="emdmotion.scene_io"):
            cloud = read_point_cloud(values.tobytes())
        assert len(cloud) == 2
        assert cloud.intensity[1] == 1.0
        assert "Rejected 1 non-finite" in caplog.text


class TestPoses:
    """Test cases for pose reading and writing."""

    def test_origin_record_is_identity(self) -> None:
        """Test the first record maps to the identity pose."""
        record = _oxts(49.0, 8.4, yaw=0.3)
        origin = GeodeticReference.from_record(record)
        pose = read_pose(record, origin)
        assert np.allclose(pose.matrix, np.eye(4), atol=1e-9)

    def test_displacement_matches_haversine(self) -> None:
        """Test metric displacement agrees with the great-circle distance."""
        origin = GeodeticReference(49.0, 8.4, 100.0)
        pose = read_pose(_oxts(49.0003, 8.4004), origin)
        distance = float(np.hypot(*pose.translation[:2]))
        assert math.isclose(distance, _haversine((49.0, 8.4), (49.0003, 8.4004)), rel_tol=1e-3)
        assert pose.translation[0] > 0.0
        assert pose.translation[1] > 0.0

    def test_pure_heading_change(self) -> None:
        """Test a record turned by 90 degrees at the origin position is a rotation only."""
        origin = GeodeticReference.from_record(_oxts(49.0, 8.4))
        pose = read_pose(_oxts(49.0, 8.4, yaw=math.pi / 2), origin)
        assert np.allclose(pose.translation, 0.0, atol=1e-9)
        assert np.allclose(pose.matrix[:3, :3], [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], atol=1e-12)

    def test_composition_over_two_records(self) -> None:
        """Test poses are the inverse origin matrix times the absolute matrix and relative motion ignores the origin."""
        origin = GeodeticReference.from_record(_oxts(49.0, 8.4, yaw=0.2))
        first_values = (49.0002, 8.4001, 100.0, 0.0, 0.0, 0.5)
        second_values = (49.0004, 8.4003, 101.0, 0.0, 0.0, -0.4)
        first = read_pose(_oxts(49.0002, 8.4001, yaw=0.5), origin)
        second = read_pose(_oxts(49.0004, 8.4003, 101.0, yaw=-0.4), origin)
        inverse_origin = np.linalg.inv(origin.origin_matrix())
        assert np.allclose(first.matrix, inverse_origin @ origin.absolute_matrix(first_values), atol=1e-6)
        assert np.allclose(second.matrix, inverse_origin @ origin.absolute_matrix(second_values), atol=1e-6)

        other = GeodeticReference.from_record(_oxts(49.0, 8.3999, 99.0, yaw=-1.0))
        relative = np.linalg.inv(first.matrix) @ second.matrix
        first_other = read_pose(_oxts(49.0002, 8.4001, yaw=0.5), other)
        second_other = read_pose(_oxts(49.0004, 8.4003, 101.0, yaw=-0.4), other)
        seen_from_other = np.linalg.inv(first_other.matrix) @ second_other.matrix
        assert np.allclose(relative, seen_from_other, atol=1e-6)

    def test_latitude_out_of_range(self) -> None:
        """Test latitudes beyond the poles are rejected."""
        origin = GeodeticReference(49.0, 8.4, 100.0)
        with pytest.raises(ValidationError):
            read_pose(_oxts(91.0, 8.4), origin)
        with pytest.raises(ValidationError):
            GeodeticReference(-95.0, 0.0, 0.0)

    def test_malformed_field(self) -> None:
        """Test an unparsable field is reported with its index and line."""
        origin = GeodeticReference(49.0, 8.4, 100.0)
        with pytest.raises(MalformedInputError) as info:
            read_pose("49.0 abc 100 0 0 0", origin, line_number=4)
        assert info.value.field_index == 1
        assert info.value.line_number == 4

    def test_pose_file_round_trip(self, tmp_path) -> None:
        """Test poses survive writing and reading an oxts file."""
        origin = GeodeticReference(49.0, 8.4, 110.0)
        poses = [PoseRecord.from_planar(0.1 * index, 2.0 * index, 0.5 * index, 0.05 * index) for index in range(4)]
        path = tmp_path / "poses.txt"
        write_pose_file(path, poses, origin)
        assert len(path.read_text().splitlines()[0].split()) == 30
        loaded, reference = read_pose_file(path, [pose.timestamp for pose in poses])
        assert math.isclose(reference.latitude, 49.0, abs_tol=1e-9)
        for original, restored in zip(poses, loaded):
            assert np.allclose(original.matrix, restored.matrix, atol=1e-6)

    def test_pose_file_count_mismatch(self, tmp_path) -> None:
        """Test timestamps must match the record count."""
        path = tmp_path / "poses.txt"
        path.write_text(_oxts(49.0, 8.4) + "\n")
        with pytest.raises(ValidationError):
            read_pose_file(path, [0.0, 0.1])


class TestLabelFiles:
    """Test cases for label and detection files."""

    def test_labels_round_trip(self, moving_labels) -> None:
        """Test labels and the frame header survive formatting and parsing."""
        labels, frames = parse_labels(format_labels(moving_labels, 3))
        assert labels == moving_labels
        assert frames == 3

    def test_labels_wrong_field_count(self) -> None:
        """Test a short label line reports its line number."""
        with pytest.raises(MalformedInputError) as info:
            parse_labels("# frames 2\n0 1 car 1 2 3\n")
        assert info.value.line_number == 2

    def test_labels_bad_integer(self) -> None:
        """Test an unparsable track id reports its field."""
        with pytest.raises(MalformedInputError) as info:
            parse_labels("0 x car 1.5 1.6 3.9 10 0 0 0 1\n")
        assert info.value.field_index == 1

    def test_labels_invalid_box(self) -> None:
        """Test a non-positive extent is a malformed input."""
        with pytest.raises(MalformedInputError):
            parse_labels("0 1 car 0 1.6 3.9 10 0 0 0 1\n")

    def test_detections_round_trip(self, matching_detections) -> None:
        """Test detections survive formatting and parsing."""
        detections, frames = parse_detections(format_detections(matching_detections))
        assert detections == matching_detections
        assert frames is None

    def test_detections_wrong_field_count(self) -> None:
        """Test a short detection line is rejected."""
        with pytest.raises(MalformedInputError):
            parse_detections("0 car 1 2 3\n")


class TestKittiConversion:
    """Test cases for the KITTI tracking label converter."""

    LINE = "0 3 Car 0 0 0.0 100 100 200 200 1.5 1.6 3.9 2.0 1.7 15.0 0.0\n"

    def test_axis_convention(self) -> None:
        """Test camera coordinates map to the Lidar convention."""
        (label,) = convert_kitti_tracking_labels(self.LINE)
        assert label.box.center == (15.0, -2.0, -1.7 + 0.75)
        assert math.isclose(label.box.yaw, math.pi / 2)
        assert label.category == Category.CAR
        assert label.is_moving

    def test_dont_care_skipped(self) -> None:
        """Test DontCare entries are ignored."""
        line = "0 -1 DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n"
        assert convert_kitti_tracking_labels(line) == []

    def test_moving_flag_from_poses(self) -> None:
        """Test the moving flag follows world displacement."""
        text = self.LINE + self.LINE.replace("0 3 Car", "1 3 Car").replace(" 15.0 0.0", " 12.0 0.0")
        static_poses = [PoseRecord.identity(0.0), PoseRecord.identity(0.1)]
        labels = convert_kitti_tracking_labels(text, static_poses)
        assert all(label.is_moving for label in labels)
        following = [PoseRecord.identity(0.0), PoseRecord.from_planar(0.1, 3.0, 0.0, 0.0)]
        labels = convert_kitti_tracking_labels(text, following)
        assert not any(label.is_moving for label in labels)


class TestSequenceDirectory:
    """Test cases for sequence directories."""

    @staticmethod
    def _sequence(unit_box: Box3D) -> FrameSequence:
        frames = tuple(
            Frame(
                PointCloud.from_xyz([[float(index), 1.0, 0.0], [2.0, 3.0, 1.0]], [0.25, 0.75]),
                PoseRecord.from_planar(0.1 * index, 1.0 * index, 0.0, 0.0),
                (ObjectLabel(index, Category.CAR, unit_box, 7, True),),
            )
            for index in range(3)
        )
        return FrameSequence(frames, 10.0, {"source": "test"})

    def test_missing_files_listed(self, tmp_path) -> None:
        """Test missing inputs are listed and reported."""
        assert len(missing_sequence_files(tmp_path)) == 3
        with pytest.raises(ValidationError, match="Missing input files"):
            read_sequence(tmp_path)

    def test_round_trip(self, tmp_path, unit_box) -> None:
        """Test a written sequence reads back."""
        sequence = self._sequence(unit_box)
        write_sequence(tmp_path, sequence, GeodeticReference(49.0, 8.4, 110.0))
        loaded = read_sequence(tmp_path)
        assert len(loaded) == 3
        assert loaded.cadence == 10.0
        assert loaded.metadata["source"] == "test"
        for original, restored in zip(sequence.frames, loaded.frames):
            assert np.array_equal(original.cloud.points, restored.cloud.points)
            assert np.allclose(original.pose.matrix, restored.pose.matrix, atol=1e-6)
        assert loaded.labels == sequence.labels

    def test_frame_range_reindexes_labels(self, tmp_path, unit_box) -> None:
        """Test a frame range loads a window and re-indexes its labels."""
        write_sequence(tmp_path, self._sequence(unit_box), GeodeticReference(49.0, 8.4, 110.0))
        loaded = read_sequence(tmp_path, range(1, 3))
        assert len(loaded) == 2
        assert [label.frame_index for label in loaded.labels] == [0, 1]
        assert loaded.frames[0].cloud.xyz[0, 0] == 1.0

    def test_frame_outside_sequence(self, tmp_path, unit_box) -> None:
        """Test a range beyond the sequence is rejected."""
        write_sequence(tmp_path, self._sequence(unit_box), GeodeticReference(49.0, 8.4, 110.0))
        with pytest.raises(ValidationError):
            read_sequence(tmp_path, range(2, 5))
