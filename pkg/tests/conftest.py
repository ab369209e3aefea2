"""
Pytest configuration and shared fixtures.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

# Add src directory to Python path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from emdmotion.config import BevConfig  # noqa: E402
from emdmotion.models import Box3D, Category, Detection, ObjectLabel, PointCloud  # noqa: E402
from emdmotion.preprocess import BevMaps  # noqa: E402


def block_maps(shape: tuple[int, int], rows: slice, cols: slice, height: float = 1.0, sigma: float = 1.0) -> BevMaps:
    """Maps holding a single occupied rectangle."""
    occupancy = np.zeros(shape)
    occupancy[rows, cols] = 1.0
    config = BevConfig(rows=shape[0], cols=shape[1], gaussian_sigma=sigma)
    gaussian = np.clip(ndimage.convolve(occupancy, config.gaussian_kernel(), mode="constant"), 0.0, 1.0)
    heights = occupancy * height
    return BevMaps(occupancy, heights, gaussian, heights.copy(), heights.copy())


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def shifted_maps():
    """Maps of a block moving by (+3, +2) cells in (x, y) between two frames."""
    previous = block_maps((60, 60), slice(20, 26), slice(20, 26))
    current = block_maps((60, 60), slice(22, 28), slice(23, 29))
    return previous, current


@pytest.fixture
def unit_box():
    """A 2 x 2 x 2 box at the origin."""
    return Box3D((0.0, 0.0, 0.0), 2.0, 2.0, 2.0, 0.0)


@pytest.fixture
def small_cloud():
    """Three points with intensities."""
    return PointCloud.from_xyz([[1.0, 2.0, 3.0], [-4.0, 5.5, 0.25], [10.0, -1.0, -1.5]], [0.1, 0.5, 1.0])


@pytest.fixture
def moving_labels():
    """Two moving cars and one parked car in frame 0."""
    return [
        ObjectLabel(0, Category.CAR, Box3D((10.0, 0.0, 0.0), 1.5, 1.6, 3.9, 0.0), 1, True),
        ObjectLabel(0, Category.CAR, Box3D((25.0, 5.0, 0.0), 1.5, 1.6, 3.9, 0.2), 2, True),
        ObjectLabel(0, Category.CAR, Box3D((15.0, -8.0, 0.0), 1.5, 1.6, 3.9, 0.0), 3, False),
    ]


@pytest.fixture
def matching_detections(moving_labels):
    """Detections identical to the moving labels."""
    return [Detection(0, label.category, label.box, 5.0) for label in moving_labels if label.is_moving]


@pytest.fixture
def make_maps():
    """Factory of maps holding one occupied rectangle."""
    return block_maps


@pytest.fixture
def restore_logging():
    """Undo the logging setup performed by command-line runs."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
    for name in ("emdmotion", "emdpipeline"):
        logging.getLogger(name).setLevel(logging.NOTSET)
