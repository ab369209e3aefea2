"""
Acceptance experiments on the seeded synthetic suite and on random geometry.

The suite runs are reduced to a prefix of the standard suite to keep the
runtime reasonable.
"""

import math

import numpy as np
import pytest
from scipy.stats import qmc

from emdmotion.box_fit import estimate_center, iou
from emdmotion.config import PipelineConfig
from emdmotion.emd_core import LowPassState, build_sector, detect_motion, emd_pair_response, exact_match, lowpass_step
from emdmotion.models import Box3D, FrameSequence, PointCloud
from emdmotion.preprocess import BevMaps, compensate_ego_motion, remove_ground, voxelize_bev
from emdmotion.synthetic import build_standard_suite, generate_synthetic_scene
from emdpipeline.runner import detect_sequence, evaluate_frames
from tests.settings import pipeline_config

pytestmark = pytest.mark.slow


def adjacent_maps(sequence: FrameSequence, config: PipelineConfig) -> list[tuple[BevMaps, BevMaps]]:
    """Current and compensated previous maps of every frame with a predecessor."""
    clouds = [remove_ground(frame.cloud, config.ground) for frame in sequence.frames]
    pairs = []
    for index in range(1, len(sequence)):
        previous, current = sequence.frames[index - 1], sequence.frames[index]
        maps_t = voxelize_bev(clouds[index], config.bev)
        maps_prev = voxelize_bev(compensate_ego_motion(clouds[index - 1], previous.pose, current.pose), config.bev)
        pairs.append((maps_t, maps_prev))
    return pairs


def outline(center: tuple[float, float], length: float, width: float, angle: float) -> PointCloud:
    """Points along the full outline of a rotated rectangle at two heights."""
    u = np.concatenate([np.linspace(-length / 2, length / 2, 41), np.full(21, length / 2)])
    v = np.concatenate([np.full(41, width / 2), np.linspace(-width / 2, width / 2, 21)])
    u, v = np.concatenate([u, -u]), np.concatenate([v, -v])
    x = center[0] + u * math.cos(angle) - v * math.sin(angle)
    y = center[1] + u * math.sin(angle) + v * math.cos(angle)
    return PointCloud.from_xyz(np.vstack([np.column_stack([x, y, np.full(len(x), z)]) for z in (0.0, 1.5)]))


class TestCoarseToFine:
    """Test cases comparing the sector search with the full-disc oracle."""

    def test_agrees_with_exhaustive_argmin(self) -> None:
        """Test final vectors equal the full-disc argmin and the search stays below half the exhaustive work."""
        config = pipeline_config()
        search = config.search
        disc = build_sector((0, 0), search.max_distance)
        agreeing = compared = evaluations = exhaustive = 0
        for _, spec in build_standard_suite(seed=0, frames=3, scenes=4):
            for maps_t, maps_prev in adjacent_maps(generate_synthetic_scene(spec), config):
                state = LowPassState(search.tau)
                lowpass_step(state, maps_prev.occupancy)
                field = detect_motion(maps_t, [maps_prev], state, search, config.inhibition, workers=4)
                evaluations += field.energy_evaluations
                exhaustive += field.exhaustive_evaluations
                for row, col in np.argwhere(field.moving):
                    oracle = exact_match(maps_t, maps_prev, (int(row), int(col)), disc, search)
                    compared += 1
                    found = (int(field.vectors[row, col, 0]), int(field.vectors[row, col, 1]))
                    agreeing += (oracle.x, oracle.y) == found
        assert compared > 0
        assert agreeing / compared >= 0.95
        assert evaluations <= 0.5 * exhaustive


class TestPairResponse:
    """Test cases for correlator direction selectivity on random stimuli."""

    def test_antisymmetry_over_random_stimuli(self) -> None:
        """Test swapping the receptors negates the response exactly for a thousand stimulus pairs."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            length = int(rng.integers(2, 40))
            delay = int(rng.integers(1, 6))
            a, b = rng.uniform(-1.0, 1.0, length), rng.uniform(-1.0, 1.0, length)
            assert np.array_equal(emd_pair_response(a, b, delay), -emd_pair_response(b, a, delay))

    def test_static_stimuli_are_silent(self) -> None:
        """Test constant receptor signals give an identically zero response."""
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = np.full(30, rng.uniform()), np.full(30, rng.uniform())
            assert not emd_pair_response(a, b, int(rng.integers(1, 6))).any()


class TestFusionRecall:
    """Test cases for recall as a function of the fused frame count."""

    def test_recall_grows_with_fused_frames(self) -> None:
        """Test recall on frames with full history does not drop as more intervals are fused."""
        recalls = []
        sequences = [generate_synthetic_scene(spec) for _, spec in build_standard_suite(seed=0, frames=5, scenes=4)]
        for fused_frames in (1, 2, 3):
            config = pipeline_config(workers=4, fusion={"num_frames": fused_frames})
            true_positives = relevant = 0
            for sequence in sequences:
                run = detect_sequence(sequence, config)
                detections = [item for item in run.detections if item.frame_index >= 3]
                labels = [label for label in sequence.labels if label.frame_index >= 3]
                scores = evaluate_frames(detections, labels, len(sequence), config).primary
                assert scores is not None
                true_positives += scores.true_positives
                relevant += scores.true_positives + scores.false_negatives
            recalls.append(true_positives / relevant)
        assert recalls[0] <= recalls[1] <= recalls[2]


class TestCenterEstimate:
    """Test cases for the rotated-projection center on partial views."""

    def test_beats_centroid_on_partial_views(self) -> None:
        """Test the median center error is below the centroid's on skewed L-shaped clusters."""
        rng = np.random.default_rng(500)
        estimate_errors, centroid_errors = [], []
        for _ in range(500):
            length, width = rng.uniform(3.5, 4.5), rng.uniform(1.5, 2.0)
            yaw = rng.uniform(0.0, math.pi)
            center = rng.uniform(-20.0, 20.0, 2)
            dense, sparse = (60, 8) if rng.integers(2) else (8, 60)
            long_side = np.column_stack([rng.uniform(-length / 2, length / 2, dense), np.full(dense, width / 2)])
            short_side = np.column_stack([np.full(sparse, length / 2), rng.uniform(-width / 2, width / 2, sparse)])
            local = np.vstack([long_side, short_side])
            cos_yaw, sin_yaw = math.cos(yaw), math.sin(yaw)
            xy = center + local @ np.array([[cos_yaw, sin_yaw], [-sin_yaw, cos_yaw]])
            xyz = np.column_stack([xy, rng.uniform(0.0, 1.5, len(xy))])
            estimate = estimate_center(PointCloud.from_xyz(xyz))
            estimate_errors.append(math.dist(estimate.center[:2], center))
            centroid_errors.append(math.dist(xy.mean(axis=0), center))
        assert np.median(estimate_errors) <= np.median(centroid_errors)

    @pytest.mark.parametrize("degrees", [0.0, 30.0, 60.0])
    def test_full_rectangles(self, degrees) -> None:
        """Test full outlines at the three projection angles are centered exactly."""
        estimate = estimate_center(outline((7.0, -3.0), 4.2, 1.8, math.radians(degrees)))
        assert estimate.center[:2] == pytest.approx((7.0, -3.0), abs=1e-6)


class TestIouOracle:
    """Test cases checking the polygon IoU against sampled areas."""

    def test_half_overlap_is_a_third(self) -> None:
        """Test unit squares shifted by half a side overlap by exactly a third."""
        first = Box3D((0.0, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0)
        second = Box3D((0.5, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0)
        assert abs(iou(first, second) - 1.0 / 3.0) < 1e-9

    def test_matches_sampled_area_on_random_pairs(self) -> None:
        """Test the BEV IoU of random box pairs agrees with a quasi-Monte-Carlo area estimate."""
        rng = np.random.default_rng(100)
        for index in range(100):
            first, second = (
                Box3D(
                    (float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-2.0, 2.0)), 0.0),
                    1.5,
                    float(rng.uniform(0.5, 2.5)),
                    float(rng.uniform(1.0, 5.0)),
                    float(rng.uniform(0.0, math.pi)),
                )
                for _ in range(2)
            )
            unit = qmc.Sobol(d=2, scramble=True, seed=index).random_base2(m=20) - 0.5
            local = unit * [first.l, first.w]
            cos_yaw, sin_yaw = math.cos(first.yaw), math.sin(first.yaw)
            xy = np.array(first.center[:2]) + local @ np.array([[cos_yaw, sin_yaw], [-sin_yaw, cos_yaw]])
            first_area, second_area = first.l * first.w, second.l * second.w
            overlap = first_area * float(second.contains_bev(xy).mean())
            sampled = overlap / (first_area + second_area - overlap)
            assert iou(first, second) == pytest.approx(sampled, abs=1e-3)
            assert iou(first, second) == pytest.approx(iou(second, first), abs=1e-12)
