"""
Geometric box estimation for proposals.

The initial center comes from projecting the points onto three rotated
frames and taking the midpoint of the tightest projection. The oriented box
then searches the yaw around that frame for the smallest enclosing rectangle.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from shapely.geometry import Polygon

from .config import BoxFitConfig
from .const import BoxFitDefaults, SizePriors
from .errors import ValidationError
from .models import Box3D, Category, FloatArray, PointCloud

logger = logging.getLogger(__name__)

IouMode = Literal["bev", "3d"]


@dataclass(frozen=True)
class CenterEstimate:
    """Initial box center from the rotated-projection procedure."""

    center: tuple[float, float, float]
    angle: float
    ranges: tuple[float, float]
    scores: tuple[float, ...]


def _project(xy: FloatArray, angle: float) -> tuple[FloatArray, FloatArray]:
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    along = xy[:, 0] * cos_a + xy[:, 1] * sin_a
    across = -xy[:, 0] * sin_a + xy[:, 1] * cos_a
    return along, across


def _rotate_back(along: float, across: float, angle: float) -> tuple[float, float]:
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    return (along * cos_a - across * sin_a, along * sin_a + across * cos_a)


def estimate_center(points: PointCloud) -> CenterEstimate:
    """Estimate the object center from the tightest of three rotated projections.

    For each angle in {0, 30, 60} degrees the points are expressed in the frame
    rotated by that angle about the vertical axis and scored by the sum of the
    squared projection ranges. The midpoint of the winning ranges is rotated
    back; the height is the mean point height.

    Args:
        points: Object points

    Returns:
        The center estimate

    Raises:
        ValidationError: If there are no points
    """
    if not len(points):
        raise ValidationError("Cannot estimate the center of an empty point set.")
    xyz = points.xyz
    height = float(xyz[:, 2].mean())
    if len(points) == 1:
        return CenterEstimate((float(xyz[0, 0]), float(xyz[0, 1]), height), 0.0, (0.0, 0.0), (0.0,))

    scores, extents = [], []
    for angle in BoxFitDefaults.CENTER_ANGLES:
        along, across = _project(xyz[:, :2], angle)
        extent = (float(along.min()), float(along.max()), float(across.min()), float(across.max()))
        scores.append((extent[1] - extent[0]) ** 2 + (extent[3] - extent[2]) ** 2)
        extents.append(extent)
    best = int(np.argmin(scores))
    angle = BoxFitDefaults.CENTER_ANGLES[best]
    low_u, high_u, low_w, high_w = extents[best]
    x, y = _rotate_back((low_u + high_u) / 2.0, (low_w + high_w) / 2.0, angle)
    return CenterEstimate((x, y, height), angle, (high_u - low_u, high_w - low_w), tuple(scores))


@dataclass(frozen=True)
class FittedBox:
    """Fitted box; ``degenerate`` marks extents clamped to the configured minimum."""

    box: Box3D
    degenerate: bool


def _hull_angles(xy: FloatArray) -> list[float]:
    unique = np.unique(xy, axis=0)
    if len(unique) < 3:
        return []
    try:
        hull = ConvexHull(unique)
    except QhullError:
        return []
    vertices = unique[hull.vertices]
    edges = np.roll(vertices, -1, axis=0) - vertices
    return [float(angle) for angle in np.arctan2(edges[:, 1], edges[:, 0])]


def _angular_gap(angle: float, reference: float) -> float:
    """Distance between two rectangle orientations, which repeat every 90 degrees."""
    quarter = math.pi / 2.0
    delta = math.fmod(angle - reference, quarter)
    if delta < 0.0:
        delta += quarter
    return min(delta, quarter - delta)


def fit_box(points: PointCloud, center: CenterEstimate, config: BoxFitConfig | None = None) -> FittedBox:
    """Fit an oriented box around the points.

    Candidate yaws are the center estimate's angle plus a grid over the
    configured span, and convex-hull edge directions inside that span. The
    candidate with the smallest enclosing rectangle area wins. Length is the
    longer side and yaw is reported in [0, pi).

    Args:
        points: Object points
        center: Initial estimate providing the search angle
        config: Search parameters

    Returns:
        The fitted box, flagged degenerate when an extent was clamped

    Raises:
        ValidationError: If there are no points
    """
    config = config or BoxFitConfig()
    if not len(points):
        raise ValidationError("Cannot fit a box to an empty point set.")
    xyz = points.xyz
    xy = xyz[:, :2]
    span = math.radians(config.refine_span_deg)
    steps = int(round(config.refine_span_deg / config.refine_step_deg))
    candidates = [center.angle + math.radians(config.refine_step_deg) * step for step in range(-steps, steps + 1)]
    if config.use_hull_angles:
        candidates += [
            center.angle + _signed_gap(angle, center.angle)
            for angle in _hull_angles(xy)
            if _angular_gap(angle, center.angle) <= span + 1e-12
        ]

    best_area, best_angle, best_extent = math.inf, 0.0, (0.0, 0.0, 0.0, 0.0)
    for angle in candidates:
        along, across = _project(xy, angle)
        extent = (float(along.min()), float(along.max()), float(across.min()), float(across.max()))
        area = (extent[1] - extent[0]) * (extent[3] - extent[2])
        if area < best_area - 1e-12:
            best_area, best_angle, best_extent = area, angle, extent

    low_u, high_u, low_w, high_w = best_extent
    length, width = high_u - low_u, high_w - low_w
    yaw = best_angle
    if width > length:
        length, width, yaw = width, length, yaw + math.pi / 2.0
    x, y = _rotate_back((low_u + high_u) / 2.0, (low_w + high_w) / 2.0, best_angle)
    z_low, z_high = float(xyz[:, 2].min()), float(xyz[:, 2].max())
    height = z_high - z_low

    degenerate = min(length, width, height) < config.min_extent
    if degenerate:
        logger.debug("Clamping degenerate box extents (%.3f, %.3f, %.3f).", length, width, height)
    box = Box3D(
        (x, y, (z_low + z_high) / 2.0),
        max(height, config.min_extent),
        max(width, config.min_extent),
        max(length, config.min_extent),
        yaw,
    )
    return FittedBox(box, degenerate)


def _signed_gap(angle: float, reference: float) -> float:
    quarter = math.pi / 2.0
    delta = math.fmod(angle - reference, quarter)
    if delta > quarter / 2.0:
        delta -= quarter
    elif delta < -quarter / 2.0:
        delta += quarter
    return delta


def _polygon(box: Box3D) -> Polygon:
    return Polygon(box.corners_bev())


def iou(first: Box3D, second: Box3D, mode: IouMode = "bev") -> float:
    """Intersection over union of two oriented boxes.

    Args:
        first: First box
        second: Second box
        mode: ``bev`` compares footprints, ``3d`` volumes

    Returns:
        Ratio in [0, 1]
    """
    polygon_a, polygon_b = _polygon(first), _polygon(second)
    overlap = polygon_a.intersection(polygon_b).area
    if mode == "bev":
        union = polygon_a.area + polygon_b.area - overlap
    else:
        vertical = max(0.0, min(first.z_max, second.z_max) - max(first.z_min, second.z_min))
        overlap *= vertical
        union = first.volume + second.volume - overlap
    if union <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, overlap / union)))


def classify_by_size(box: Box3D) -> Category:
    """Assign the category whose mean size is closest to the box.

    This is a size heuristic, not a classifier: it lets per-category metrics
    run on geometric detections.

    Args:
        box: Fitted box

    Returns:
        The nearest category
    """
    size = np.array([box.h, box.w, box.l])
    priors = {
        Category.CAR: SizePriors.CAR,
        Category.PEDESTRIAN: SizePriors.PEDESTRIAN,
        Category.CYCLIST: SizePriors.CYCLIST,
    }
    return min(priors, key=lambda category: float(np.linalg.norm(size - np.array(priors[category]))))
