"""
End-to-end runs of the detection pipeline on synthetic scenes.
"""

import math

import pytest

from emdmotion.synthetic import generate_synthetic_scene
from emdpipeline.cli import main
from emdpipeline.runner import detect_sequence, run_detect, run_synth
from emdpipeline.settings import ExitCodes, OutputFiles
from tests.settings import MOVING_SCENE, STATIC_SCENE, pipeline_config


@pytest.fixture
def static_sequence(tmp_path):
    """Static scene written to disk."""
    spec = tmp_path / "static.txt"
    spec.write_text(STATIC_SCENE.dumps(), encoding="utf-8")
    run_synth(spec, tmp_path / "static", pipeline_config())
    return tmp_path / "static"


class TestStaticScene:
    """Test cases for scenes without movers."""

    def test_no_detections(self) -> None:
        """Test a parked car seen from a parked sensor is never reported as moving."""
        run = detect_sequence(generate_synthetic_scene(STATIC_SCENE), pipeline_config())
        assert run.detections == []
        assert run.failed_frames == []
        assert all(report.moving_cells == 0 for report in run.frames)

    def test_repeated_runs_are_identical(self, tmp_path, static_sequence) -> None:
        """Test two runs with the same inputs write byte-identical results."""
        config = pipeline_config(io={"sequence": str(static_sequence), "output": str(tmp_path / "out")})
        run_detect(config)
        names = (OutputFiles.DETECTIONS, OutputFiles.MANIFEST)
        first = {name: (tmp_path / "out" / name).read_bytes() for name in names}
        run_detect(config)
        second = {name: (tmp_path / "out" / name).read_bytes() for name in first}
        assert first == second

    def test_worker_count_does_not_change_results(self, tmp_path, static_sequence) -> None:
        """Test threaded matching gives the same detections as a single worker."""
        outputs = []
        for workers in (1, 3):
            out = tmp_path / f"out{workers}"
            run_detect(pipeline_config(workers=workers, io={"sequence": str(static_sequence), "output": str(out)}))
            outputs.append((out / OutputFiles.DETECTIONS).read_bytes())
        assert outputs[0] == outputs[1]


@pytest.mark.slow
class TestMovingScene:
    """Test cases for a scene with one fast car."""

    def test_mover_is_detected(self) -> None:
        """Test at least one detection lands near the moving car."""
        sequence = generate_synthetic_scene(MOVING_SCENE)
        run = detect_sequence(sequence, pipeline_config())
        assert run.failed_frames == []
        movers = [label for label in sequence.labels if label.is_moving]
        near = [
            detection
            for detection in run.detections
            for label in movers
            if label.frame_index == detection.frame_index
            and math.dist(label.box.center[:2], detection.box.center[:2]) < 3.0
        ]
        assert near
        assert all(detection.frame_index > 0 for detection in run.detections)

    @pytest.mark.usefixtures("restore_logging")
    def test_command_line_round_trip(self, tmp_path) -> None:
        """Test synth, detect and eval chained through the command line."""
        spec = tmp_path / "moving.txt"
        spec.write_text(MOVING_SCENE.dumps(), encoding="utf-8")
        sequence, out = tmp_path / "seq", tmp_path / "out"
        assert main(["synth", str(spec), "--out", str(sequence)]) == ExitCodes.SUCCESS
        assert main(["detect", str(sequence), "--out", str(out), "--workers", "2"]) == ExitCodes.SUCCESS
        code = main(["eval", str(out / OutputFiles.DETECTIONS), str(sequence / "labels.txt"), "--out", str(out)])
        assert code == ExitCodes.SUCCESS
        assert (out / OutputFiles.METRICS).exists()
        assert (out / OutputFiles.RECALL).exists()
