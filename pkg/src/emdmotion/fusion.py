"""
Multi-frame fusion of motion fields, clustering of moving cells and proposal extraction.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import ndimage, sparse
from scipy.sparse.csgraph import connected_components

from .config import BevConfig, ClusterConfig, FusionConfig
from .const import DefaultValues
from .emd_core import MotionField
from .errors import ValidationError
from .models import FloatArray, PointCloud

logger = logging.getLogger(__name__)

# Forward half of the 8-neighborhood as (row, col) steps.
_NEIGHBOR_STEPS = ((0, 1), (1, 0), (1, 1), (1, -1))


def fuse_multiframe(fields: Sequence[MotionField], config: FusionConfig | None = None) -> MotionField:
    """Fuse the fields of the pairs (t, t-k), k = 1..K, by per-cell max pooling.

    Every moving cell of every field is a candidate; the candidate with the
    largest displacement per frame wins. Fused vectors are expressed in cells
    per frame and the fused moving mask is the union of the input masks.

    Args:
        fields: Motion fields ordered by interval
        config: Fusion parameters; with ``normalize`` off candidates compete on raw magnitude

    Returns:
        The fused field; a single input is returned unchanged

    Raises:
        ValidationError: If no field is given or the grids differ
    """
    config = config or FusionConfig()
    if not fields:
        raise ValidationError("Fusion needs at least one motion field.")
    shape = fields[0].shape
    for field in fields:
        if field.shape != shape:
            raise ValidationError(f"Motion field grids differ: {field.shape} vs {shape}.")
    if len(fields) == 1:
        return fields[0]

    best = np.full(shape, -np.inf)
    vectors = np.zeros((*shape, 2))
    score = np.zeros(shape)
    energy = np.zeros(shape)
    response = np.zeros(shape)
    moving = np.zeros(shape, dtype=bool)
    for field in fields:
        per_frame = field.vectors / field.interval
        strength = np.hypot(per_frame[..., 0], per_frame[..., 1]) if config.normalize else field.magnitude
        wins = field.moving & (strength > best)
        best = np.where(wins, strength, best)
        vectors[wins] = per_frame[wins]
        score[wins] = field.score[wins]
        energy[wins] = field.energy[wins]
        response[wins] = field.response[wins]
        moving |= field.moving

    fused = MotionField(
        vectors=vectors,
        defined=moving.copy(),
        score=score,
        moving=moving,
        rough_vectors=fields[0].rough_vectors,
        rough_mask=fields[0].rough_mask,
        energy=energy,
        response=response,
        radius=fields[0].radius,
        interval=1,
        energy_evaluations=sum(field.energy_evaluations for field in fields),
        exhaustive_evaluations=sum(field.exhaustive_evaluations for field in fields),
        degenerate_cells=sum(field.degenerate_cells for field in fields),
    )
    logger.debug("Fused %d fields into %d moving cells.", len(fields), int(moving.sum()))
    return fused


@dataclass(frozen=True, eq=False)
class Cluster:
    """Connected moving cells sharing a common motion; ``cells`` are (row, col) in row-major order."""

    cluster_id: int
    cells: npt.NDArray[np.int64]
    mean_vector: tuple[float, float]

    def __post_init__(self) -> None:
        if not len(self.cells):
            raise ValidationError("A cluster needs at least one cell.")

    @property
    def min_row(self) -> int:
        return int(self.cells[:, 0].min())

    @property
    def max_row(self) -> int:
        return int(self.cells[:, 0].max())

    @property
    def min_col(self) -> int:
        return int(self.cells[:, 1].min())

    @property
    def max_col(self) -> int:
        return int(self.cells[:, 1].max())

    def __len__(self) -> int:
        return int(self.cells.shape[0])


def _similar(first: FloatArray, second: FloatArray, config: ClusterConfig) -> npt.NDArray[np.bool_]:
    norm_a = np.hypot(first[:, 0], first[:, 1])
    norm_b = np.hypot(second[:, 0], second[:, 1])
    longest = np.maximum(norm_a, norm_b)
    both_zero = longest == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = (first * second).sum(axis=1) / (norm_a * norm_b)
        ratio = np.abs(norm_a - norm_b) / longest
    angle_ok = cosine >= math.cos(math.radians(config.max_angle_deg)) - 1e-12
    ratio_ok = ratio <= config.max_magnitude_ratio + 1e-12
    return np.asarray(both_zero | (angle_ok & ratio_ok & (norm_a > 0.0) & (norm_b > 0.0)))


def cluster_moving_cells(field: MotionField, config: ClusterConfig | None = None) -> list[Cluster]:
    """Group moving cells into objects.

    Two 8-neighboring moving cells are linked when their vectors differ by at
    most the configured angle and relative magnitude. Components smaller than
    the minimum size are dropped as noise.

    Args:
        field: Fused motion field
        config: Clustering parameters

    Returns:
        Clusters sorted by minimum row, then minimum column
    """
    config = config or ClusterConfig()
    moving = field.moving
    rows, cols = moving.shape
    cells = np.argwhere(moving)
    if not len(cells):
        return []
    node = np.full(moving.shape, -1, dtype=np.int64)
    node[cells[:, 0], cells[:, 1]] = np.arange(len(cells))

    sources, targets = [], []
    for d_row, d_col in _NEIGHBOR_STEPS:
        neighbor_rows = cells[:, 0] + d_row
        neighbor_cols = cells[:, 1] + d_col
        inside = (neighbor_rows >= 0) & (neighbor_rows < rows) & (neighbor_cols >= 0) & (neighbor_cols < cols)
        origin = cells[inside]
        partner = node[neighbor_rows[inside], neighbor_cols[inside]]
        linked = partner >= 0
        origin, partner = origin[linked], partner[linked]
        first = field.vectors[origin[:, 0], origin[:, 1]]
        second = field.vectors[cells[partner, 0], cells[partner, 1]]
        similar = _similar(first, second, config)
        sources.append(node[origin[similar, 0], origin[similar, 1]])
        targets.append(partner[similar])

    source = np.concatenate(sources)
    target = np.concatenate(targets)
    graph = sparse.coo_matrix((np.ones(len(source)), (source, target)), shape=(len(cells), len(cells)))
    count, labels = connected_components(graph, directed=False)

    groups = []
    for label in range(count):
        members = cells[labels == label]
        if len(members) < config.min_cells:
            continue
        flat = members[:, 0] * cols + members[:, 1]
        order = np.argsort(flat)
        groups.append((int(members[:, 0].min()), int(members[:, 1].min()), int(flat.min()), members[order]))
    groups.sort(key=lambda group: group[:3])

    clusters = []
    for cluster_id, (_, _, _, members) in enumerate(groups):
        mean = field.vectors[members[:, 0], members[:, 1]].mean(axis=0)
        clusters.append(Cluster(cluster_id, members, (float(mean[0]), float(mean[1]))))
    logger.debug("Formed %d clusters from %d moving cells.", len(clusters), len(cells))
    return clusters


@dataclass(frozen=True, eq=False)
class Proposal:
    """Raw points gathered from the expanded footprint of a cluster."""

    points: PointCloud
    cluster: Cluster
    velocity: tuple[float, float]
    frame_index: int
    footprint: npt.NDArray[np.bool_]

    def __post_init__(self) -> None:
        if not len(self.points):
            raise ValidationError("A proposal needs at least one point.")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


def cluster_footprint(cluster: Cluster, shape: tuple[int, int], expansion: int) -> npt.NDArray[np.bool_]:
    """Cluster cells dilated by ``expansion`` cells in every direction."""
    footprint = np.zeros(shape, dtype=bool)
    footprint[cluster.cells[:, 0], cluster.cells[:, 1]] = True
    if expansion > 0:
        structure = np.ones((2 * expansion + 1, 2 * expansion + 1), dtype=bool)
        footprint = ndimage.binary_dilation(footprint, structure=structure)
    return footprint


def extract_proposal_points(
    cluster: Cluster,
    cloud: PointCloud,
    config: BevConfig,
    expansion: int = 1,
    cadence: float = DefaultValues.CADENCE,
    frame_index: int = 0,
) -> Proposal | None:
    """Gather the points lying in the expanded cluster footprint.

    Args:
        cluster: Moving cells of one object
        cloud: Ground-removed scan of the current frame
        config: Grid geometry
        expansion: Dilation of the footprint in cells
        cadence: Frame rate in Hz, converts cells per frame to m/s
        frame_index: Frame the proposal belongs to

    Returns:
        The proposal, or None with a warning when no point falls in the footprint
    """
    footprint = cluster_footprint(cluster, config.shape, expansion)
    rows, cols = config.cell_indices(cloud.xyz[:, :2])
    inside = config.inside(rows, cols)
    selected = np.zeros(len(cloud), dtype=bool)
    selected[inside] = footprint[rows[inside], cols[inside]]
    if not selected.any():
        logger.warning("Dropped empty proposal for cluster %d in frame %d.", cluster.cluster_id, frame_index)
        return None
    scale = config.cell_size * cadence
    velocity = (cluster.mean_vector[0] * scale, cluster.mean_vector[1] * scale)
    return Proposal(cloud.subset(selected), cluster, velocity, frame_index, footprint)
