"""
Debug and result exports: BEV grids, motion fields, flow images, proposals and metrics.
"""

import csv
import logging
import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import numpy.typing as npt
from matplotlib.colors import hsv_to_rgb

from .config import BevConfig
from .emd_core import MotionField
from .errors import MalformedInputError
from .evaluation import MetricsReport
from .fusion import Proposal
from .models import FloatArray
from .preprocess import BevMaps
from .scene_io import write_point_cloud

logger = logging.getLogger(__name__)

MOTION_COLUMNS = ("row", "col", "x", "y", "dx", "dy", "score", "moving")
PROPOSAL_COLUMNS = ("frame", "cluster", "points", "offset", "vx", "vy", "min_row", "min_col", "max_row", "max_col")


def write_pgm(path: str | Path, grid: FloatArray, comment: str = "") -> None:
    """Write a grid as a binary 8-bit PGM, scaled from its own value range.

    Args:
        path: Output file
        grid: 2D array, row 0 written as the top image row
        comment: Header comment, the value range is appended
    """
    low, high = (float(grid.min()), float(grid.max())) if grid.size else (0.0, 0.0)
    span = high - low
    scaled = np.zeros(grid.shape) if span <= 0.0 else (grid - low) / span
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    rows, cols = grid.shape
    header = f"P5\n# {comment} range [{low:.6g}, {high:.6g}]\n{cols} {rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def export_bev_maps(maps: BevMaps, config: BevConfig, directory: str | Path, frame_index: int) -> list[Path]:
    """Write the occupancy, height and Gaussian grids of a frame.

    Args:
        maps: Maps of the frame
        config: Grid geometry used for the CSV cell centers
        directory: Output directory, created when missing
        frame_index: Frame used in the file names

    Returns:
        Written files: three PGMs and a CSV of occupied cells
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("occupancy", "height", "gaussian"):
        path = directory / f"{frame_index:06d}_{name}.pgm"
        write_pgm(path, getattr(maps, name), f"frame {frame_index} {name}")
        written.append(path)

    path = directory / f"{frame_index:06d}_bev.csv"
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("row", "col", "x", "y", "height", "gaussian", "z_min", "z_max"))
        for row, col in np.argwhere(maps.occupied):
            x, y = config.cell_center(row, col)
            writer.writerow(
                (
                    int(row),
                    int(col),
                    f"{x:.3f}",
                    f"{y:.3f}",
                    f"{maps.height[row, col]:.4f}",
                    f"{maps.gaussian[row, col]:.4f}",
                    f"{maps.z_min[row, col]:.4f}",
                    f"{maps.z_max[row, col]:.4f}",
                )
            )
    written.append(path)
    return written


def write_motion_csv(field: MotionField, config: BevConfig, path: str | Path) -> None:
    """Write the defined cells of a motion field, one cell per row in row-major order."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(MOTION_COLUMNS)
        for row, col in np.argwhere(field.defined):
            x, y = config.cell_center(row, col)
            dx, dy = field.vectors[row, col]
            writer.writerow(
                (
                    int(row),
                    int(col),
                    f"{x:.3f}",
                    f"{y:.3f}",
                    repr(float(dx)),
                    repr(float(dy)),
                    f"{field.score[row, col]:.6g}",
                    int(field.moving[row, col]),
                )
            )


def read_motion_csv(path: str | Path, shape: tuple[int, int]) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
    """Read a motion CSV back into dense arrays.

    Args:
        path: File written by ``write_motion_csv``
        shape: Grid shape

    Returns:
        ``(rows, cols, 2)`` vectors and the moving mask

    Raises:
        MalformedInputError: If a record cannot be parsed or lies outside the grid
    """
    vectors = np.zeros((*shape, 2))
    moving = np.zeros(shape, dtype=bool)
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(MOTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MalformedInputError(f"Motion CSV lacks columns {sorted(missing)}.", line_number=1)
        for number, record in enumerate(reader, start=2):
            try:
                row, col = int(record["row"]), int(record["col"])
                vector = (float(record["dx"]), float(record["dy"]))
                flag = bool(int(record["moving"]))
            except (TypeError, ValueError) as error:
                raise MalformedInputError(f"Unparsable motion record: {error}", line_number=number) from error
            if not (0 <= row < shape[0] and 0 <= col < shape[1]):
                raise MalformedInputError(f"Cell ({row}, {col}) lies outside the grid {shape}.", line_number=number)
            vectors[row, col] = vector
            moving[row, col] = flag
    return vectors, moving


def flow_image(
    vectors: FloatArray, moving: npt.NDArray[np.bool_], max_magnitude: float | None = None
) -> npt.NDArray[np.uint8]:
    """Color-code a motion field.

    Hue encodes the direction and brightness the magnitude; non-moving cells
    are black. The image is flipped so that +y points up.

    Args:
        vectors: ``(rows, cols, 2)`` displacement per cell
        moving: Cells to draw
        max_magnitude: Magnitude mapped to full brightness, the largest moving magnitude by default

    Returns:
        ``(rows, cols, 3)`` RGB image
    """
    magnitude = np.hypot(vectors[..., 0], vectors[..., 1])
    if max_magnitude is None:
        max_magnitude = float(magnitude[moving].max()) if moving.any() else 1.0
    max_magnitude = max(max_magnitude, 1e-12)
    hue = (np.arctan2(vectors[..., 1], vectors[..., 0]) % (2.0 * math.pi)) / (2.0 * math.pi)
    value = np.where(moving, np.clip(magnitude / max_magnitude, 0.0, 1.0), 0.0)
    hsv = np.stack([hue, np.ones_like(hue), value], axis=-1)
    rgb = hsv_to_rgb(hsv)
    return np.flipud(np.round(rgb * 255.0).astype(np.uint8))


def write_ppm(path: str | Path, image: npt.NDArray[np.uint8], comment: str = "") -> None:
    rows, cols, _ = image.shape
    header = f"P6\n# {comment}\n{cols} {rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(image).tobytes())


def write_proposals(proposals: Sequence[Proposal], text_path: str | Path, binary_path: str | Path) -> None:
    """Write proposal summaries and their points.

    Points of all proposals are concatenated in the scan layout into the
    binary file; each text record holds its byte offset and point count.

    Args:
        proposals: Proposals in output order
        text_path: Summary file, one whitespace-separated record per proposal
        binary_path: Point sidecar
    """
    offset = 0
    lines = ["# " + " ".join(PROPOSAL_COLUMNS)]
    with Path(binary_path).open("wb") as sidecar:
        for proposal in proposals:
            blob = write_point_cloud(proposal.points)
            sidecar.write(blob)
            cluster = proposal.cluster
            lines.append(
                f"{proposal.frame_index} {cluster.cluster_id} {len(proposal.points)} {offset} "
                f"{proposal.velocity[0]!r} {proposal.velocity[1]!r} "
                f"{cluster.min_row} {cluster.min_col} {cluster.max_row} {cluster.max_col}"
            )
            offset += len(blob)
    Path(text_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("Wrote %d proposals, %d bytes of points.", len(proposals), offset)


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    """Write one row per view and category; views that were not evaluated are marked unavailable."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("view", "category", "tp", "fp", "fn", "precision", "recall", "f1", "degenerate"))
        for view, scores in report.views.items():
            if scores is None:
                writer.writerow((view, "all", "", "", "", "unavailable", "unavailable", "unavailable", ""))
                continue
            for category, values in [("all", scores)] + sorted(report.categories.get(view, {}).items()):
                writer.writerow(
                    (
                        view,
                        category,
                        values.true_positives,
                        values.false_positives,
                        values.false_negatives,
                        f"{values.precision:.6f}",
                        f"{values.recall:.6f}",
                        f"{values.f1:.6f}",
                        int(values.degenerate),
                    )
                )


def write_recall_csv(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("category", "upper_bound", "recall"))
        for category, curve in report.recall_curves.items():
            for upper, recall in curve:
                writer.writerow((category, "inf" if math.isinf(upper) else f"{upper:g}", f"{recall:.6f}"))
