"""
Elementary motion detector over bird's-eye-view receptor grids.

Detection runs in four stages: temporal low-pass filtering of the occupancy
map, an axis-aligned correlator search giving a rough direction per cell, a
dense energy match restricted to a right-angled sector around that direction,
and lateral inhibition cancelling motion shared by a whole neighborhood.

Offsets are (x, y) pairs in cells: x runs along grid columns, y along rows.
"""

import dataclasses
import functools
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .config import InhibitionKernel, SearchConfig
from .errors import ConfigurationError, InternalConsistencyError, ValidationError
from .models import FloatArray
from .preprocess import BevMaps

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

DEGENERATE_SPAN = 1e-12


@dataclass(eq=False)
class LowPassState:
    """Filtered occupancy carried between frames; ``filtered`` is None until the first step."""

    tau: float
    filtered: FloatArray | None = None

    def __post_init__(self) -> None:
        if not self.tau > 0.0:
            raise ConfigurationError(f"tau must be positive (got {self.tau})", key="search.tau")

    def copy(self) -> "LowPassState":
        return LowPassState(self.tau, None if self.filtered is None else self.filtered.copy())


def lowpass_step(state: LowPassState, frame: FloatArray) -> FloatArray:
    """Advance the first-order low-pass filter by one frame.

    The update is ``I^f += (I - I^f) / (1 + tau)``; the first call initializes ``I^f = I``.

    Args:
        state: Filter state, updated in place
        frame: Occupancy map of the new frame

    Returns:
        A copy of the filtered map

    Raises:
        ValidationError: If the frame shape differs from the state
    """
    frame = np.asarray(frame, dtype=np.float64)
    if state.filtered is None:
        state.filtered = frame.copy()
    elif state.filtered.shape != frame.shape:
        raise ValidationError(f"Low-pass state has shape {state.filtered.shape}, frame has {frame.shape}.")
    else:
        state.filtered = state.filtered + (frame - state.filtered) / (1.0 + state.tau)
    return state.filtered.copy()


def emd_pair_response(a: npt.ArrayLike, b: npt.ArrayLike, delay: int = 1, mirror: bool = True) -> FloatArray:
    """Correlator response of two neighboring receptors.

    The mirror-symmetric model returns ``a[t-d] * b[t] - a[t] * b[t-d]``; the
    single-arm model keeps only the first product. Leading samples without a
    delayed partner are 0.

    Args:
        a: Signal of the first receptor
        b: Signal of the second receptor
        delay: Delay in samples
        mirror: Subtract the mirrored arm

    Returns:
        Response sequence of the input length

    Raises:
        ValidationError: If the signals differ in length or the delay is below 1
    """
    first = np.asarray(a, dtype=np.float64)
    second = np.asarray(b, dtype=np.float64)
    if first.shape != second.shape or first.ndim != 1:
        raise ValidationError("Receptor signals must be one-dimensional and of equal length.")
    if delay < 1:
        raise ValidationError(f"Delay must be at least 1 (got {delay}).")
    response = np.zeros_like(first)
    if delay < len(first):
        forward = first[:-delay] * second[delay:]
        response[delay:] = forward - first[delay:] * second[:-delay] if mirror else forward
    return response


def _shift(grid: FloatArray, dy: int, dx: int) -> FloatArray:
    """Return ``out[i, j] = grid[i + dy, j + dx]``, zero outside the grid."""
    rows, cols = grid.shape
    out = np.zeros_like(grid)
    if abs(dy) >= rows or abs(dx) >= cols:
        return out
    out[max(0, -dy) : rows - max(0, dy), max(0, -dx) : cols - max(0, dx)] = grid[
        max(0, dy) : rows - max(0, -dy), max(0, dx) : cols - max(0, -dx)
    ]
    return out


def search_offsets(radius: int) -> IntArray:
    """Offsets in [-R, R] ordered 0, -1, 1, ..., -R, R so that the first maximum has the smallest norm."""
    order = [0]
    for step in range(1, radius + 1):
        order.extend((-step, step))
    return np.array(order, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class RoughField:
    """Output of the fast search: rough direction, score and rough-moving mask per cell."""

    x_sm: IntArray
    y_sm: IntArray
    score: FloatArray
    mask: BoolArray

    @property
    def vectors(self) -> IntArray:
        return np.stack([self.x_sm, self.y_sm], axis=-1)


def _axis_scores(
    occupancy: FloatArray, filtered: FloatArray, offsets: IntArray, horizontal: bool
) -> tuple[IntArray, FloatArray]:
    scores = np.empty((len(offsets), *occupancy.shape))
    for index, offset in enumerate(offsets):
        dy, dx = (0, int(offset)) if horizontal else (int(offset), 0)
        scores[index] = filtered * _shift(occupancy, dy, dx) - occupancy * _shift(filtered, dy, dx)
    best = np.argmax(scores, axis=0)
    return offsets[best], np.take_along_axis(scores, best[None], axis=0)[0]


def fast_search(occupancy: FloatArray, filtered: FloatArray, config: SearchConfig) -> RoughField:
    """Axis-aligned correlator search for rough motion directions.

    For every cell the horizontal score ``S_h[x] = I^f[c] I[c+x] - I[c] I^f[c+x]``
    and its vertical counterpart are evaluated for offsets in [-R, R]; each
    component keeps its maximizing offset, or 0 when the maximum does not
    exceed the score threshold. A cell is rough-moving when it is occupied and
    either maximum exceeds the threshold.

    Args:
        occupancy: Binary occupancy map of the current frame
        filtered: Low-pass filtered occupancy
        config: Search parameters; ``connections`` limits the evaluated axes

    Returns:
        The rough field

    Raises:
        ValidationError: If the maps differ in shape
    """
    if occupancy.shape != filtered.shape:
        raise ValidationError(f"Map shapes differ: {occupancy.shape} vs {filtered.shape}.")
    offsets = search_offsets(config.max_distance)
    zeros = np.zeros(occupancy.shape, dtype=np.int64)
    best_score = np.full(occupancy.shape, -np.inf)
    x_sm, y_sm = zeros, zeros.copy()
    if config.connections in ("both", "horizontal"):
        x_sm, score_h = _axis_scores(occupancy, filtered, offsets, horizontal=True)
        x_sm = np.where(score_h > config.fast_score_threshold, x_sm, 0)
        best_score = np.maximum(best_score, score_h)
    if config.connections in ("both", "vertical"):
        y_sm, score_v = _axis_scores(occupancy, filtered, offsets, horizontal=False)
        y_sm = np.where(score_v > config.fast_score_threshold, y_sm, 0)
        best_score = np.maximum(best_score, score_v)
    mask = (best_score > config.fast_score_threshold) & (occupancy > 0.5)
    return RoughField(x_sm.astype(np.int64), y_sm.astype(np.int64), best_score, mask)


@functools.lru_cache(maxsize=1024)
def _sector_offsets(bisector_x: int, bisector_y: int, radius: int) -> tuple[tuple[int, int], ...]:
    span = np.arange(-radius, radius + 1)
    ys, xs = np.meshgrid(span, span, indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    keep = xs**2 + ys**2 <= radius**2
    if bisector_x or bisector_y:
        dot = xs * bisector_x + ys * bisector_y
        norms = (xs**2 + ys**2) * (bisector_x**2 + bisector_y**2)
        keep &= ((dot >= 0) & (2 * dot**2 >= norms)) | ((xs == 0) & (ys == 0))
    return tuple((int(x), int(y)) for x, y in zip(xs[keep], ys[keep]))


@dataclass(frozen=True, eq=False)
class SectorSpace:
    """Candidate offsets of the exact match, in row-major order."""

    bisector: tuple[int, int]
    radius: int
    offsets: IntArray
    origin: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if len({(int(x), int(y)) for x, y in self.offsets}) != len(self.offsets):
            raise InternalConsistencyError("Sector offsets are not unique.")

    def __len__(self) -> int:
        return int(self.offsets.shape[0])


def build_sector(bisector: tuple[int, int], radius: int, origin: tuple[int, int] | None = None) -> SectorSpace:
    """Right-angled sector of integer offsets around a bisector.

    Contains every offset within Euclidean distance R whose angle to the
    bisector is at most 45 degrees, plus the zero offset. A zero bisector
    carries no direction and yields the full disc.

    Args:
        bisector: Rough direction (x_sm, y_sm)
        radius: Sector radius R in cells
        origin: Cell the sector belongs to, informational

    Returns:
        The sector

    Raises:
        ConfigurationError: If the radius is below 1
    """
    if radius < 1:
        raise ConfigurationError(f"R must be at least 1 (got {radius})", key="search.max_distance")
    bx, by = int(bisector[0]), int(bisector[1])
    offsets = np.array(_sector_offsets(bx, by, int(radius)), dtype=np.int64).reshape(-1, 2)
    return SectorSpace((bx, by), int(radius), offsets, origin)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of the exact match at one cell."""

    x: int
    y: int
    energy: float
    degenerate: bool
    evaluations: int


class _MatchContext:
    """Zero-padded copies of two map sets, shared by every cell of one detection step."""

    def __init__(self, maps_t: BevMaps, maps_prev: BevMaps, radius: int, patch_size: int) -> None:
        if maps_t.shape != maps_prev.shape:
            raise ValidationError(f"Map shapes differ: {maps_t.shape} vs {maps_prev.shape}.")
        self.half = patch_size // 2
        self.radius = radius
        self.pad = self.half + radius
        valid = np.ones(maps_t.shape)
        self.current = [self._padded(grid) for grid in (maps_t.gaussian, maps_t.occupancy, maps_t.height, valid)]
        self.previous = [
            self._padded(grid) for grid in (maps_prev.gaussian, maps_prev.occupancy, maps_prev.height, valid)
        ]

    def _padded(self, grid: FloatArray) -> FloatArray:
        return np.pad(np.asarray(grid, dtype=np.float64), self.pad, mode="constant")

    def energies(
        self, cell: tuple[int, int], offsets: IntArray
    ) -> tuple[FloatArray, FloatArray, FloatArray, IntArray]:
        """Per-offset energies at a cell, averaged over participating patch cells."""
        row, col = cell[0] + self.pad, cell[1] + self.pad
        size = 2 * self.half + 1
        half = self.half
        anchor = [grid[row - half : row + half + 1, col - half : col + half + 1] for grid in self.previous]
        reach = self.half + self.radius
        ys = offsets[:, 1] + self.radius
        xs = offsets[:, 0] + self.radius
        regions = [grid[row - reach : row + reach + 1, col - reach : col + reach + 1] for grid in self.current]
        windows = [sliding_window_view(region, (size, size))[ys, xs] for region in regions]
        gauss_c, occ_c, height_c, valid_c = windows
        gauss_a, occ_a, height_a, valid_a = anchor
        valid = (valid_c * valid_a) > 0.5
        counts = valid.sum(axis=(1, 2))
        scale = np.maximum(counts, 1)
        e1 = np.where(valid, np.abs(gauss_c * gauss_a), 0.0).sum(axis=(1, 2)) / scale
        e2 = np.where(valid, np.abs(occ_c - occ_a), 0.0).sum(axis=(1, 2)) / scale
        either = valid & ((occ_c > 0.5) | (occ_a > 0.5))
        e3 = np.where(either, np.abs(height_c - height_a), 0.0).sum(axis=(1, 2)) / scale
        return e1, e2, e3, counts

    def match(self, cell: tuple[int, int], sector: SectorSpace, weights: tuple[float, float, float]) -> MatchResult:
        if not len(sector):
            raise InternalConsistencyError(f"Empty sector at cell {cell}.")
        e1, e2, e3, counts = self.energies(cell, sector.offsets)
        usable = counts > 0
        if not usable.any():
            raise InternalConsistencyError(f"No sector offset overlaps the grid at cell {cell}.")
        offsets = sector.offsets[usable]
        normalized = [_normalize(energy[usable]) for energy in (e1, e2, e3)]
        if all(flag for _, flag in normalized):
            return MatchResult(0, 0, float(weights[0]), True, len(offsets))
        (n1, _), (n2, _), (n3, _) = normalized
        total = weights[0] * (1.0 - n1) + weights[1] * n2 + weights[2] * n3
        norms = offsets[:, 0] ** 2 + offsets[:, 1] ** 2
        best = int(np.lexsort((offsets[:, 0], offsets[:, 1], norms, total))[0])
        return MatchResult(int(offsets[best, 0]), int(offsets[best, 1]), float(total[best]), False, len(offsets))


def _overlapping(position: IntArray, shift: IntArray, size: int, half: int) -> BoolArray:
    # Patch index i must keep both position - half + i and position + shift - half + i on the grid.
    low = np.maximum(0, np.maximum(half - position, half - position - shift))
    high = np.minimum(2 * half, np.minimum(size - 1 - position + half, size - 1 - position - shift + half))
    return np.asarray(low <= high)


def usable_offset_count(shape: tuple[int, int], cells: IntArray, offsets: IntArray, half: int) -> int:
    """Number of (cell, offset) pairs whose two patches share at least one grid cell.

    These are the candidates the exact match scores; offsets whose shifted
    patch lies entirely beyond the border are skipped there and here.

    Args:
        shape: Grid shape (rows, cols)
        cells: (row, col) cells
        offsets: (x, y) offsets
        half: Half the patch size

    Returns:
        The count over all cells
    """
    if not len(cells) or not len(offsets):
        return 0
    rows, cols = shape
    along_rows = _overlapping(cells[:, :1], offsets[None, :, 1], rows, half)
    along_cols = _overlapping(cells[:, 1:], offsets[None, :, 0], cols, half)
    return int((along_rows & along_cols).sum())


def _normalize(energy: FloatArray) -> tuple[FloatArray, bool]:
    low, high = float(energy.min()), float(energy.max())
    span = high - low
    if span <= DEGENERATE_SPAN * max(1.0, abs(high)):
        return np.zeros_like(energy), True
    return (energy - low) / span, False


def exact_match(
    maps_t: BevMaps, maps_prev: BevMaps, cell: tuple[int, int], sector: SectorSpace, config: SearchConfig
) -> MatchResult:
    """Dense energy match of one cell over its sector.

    The patch of ``maps_prev`` centered at the cell is compared with the patch
    of ``maps_t`` centered at the cell plus each offset, so the winning offset
    is the displacement from the earlier frame to the current one. Patches
    are clipped at the grid border and energies averaged over the cells both
    patches cover. Each energy is min-max normalized over the sector and the
    total ``w1 (1 - E1') + w2 E2' + w3 E3'`` is minimized; ties go to the
    smallest displacement, then row-major order.

    Args:
        maps_t: Maps of the current frame
        maps_prev: Maps of the earlier frame, compensated into the current frame
        cell: (row, col) of the cell
        sector: Candidate offsets
        config: Search parameters

    Returns:
        The winning offset; (0, 0) flagged degenerate when every energy is constant over the sector

    Raises:
        InternalConsistencyError: If the sector is empty
    """
    context = _MatchContext(maps_t, maps_prev, sector.radius, config.patch_size)
    return context.match(cell, sector, config.weights)


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-cell motion of one frame pair.

    ``vectors`` holds (x, y) displacements in cells over ``interval`` frames and
    is meaningful only where ``defined`` is set. ``response`` is the filtered
    magnitude after lateral inhibition.
    """

    vectors: FloatArray
    defined: BoolArray
    score: FloatArray
    moving: BoolArray
    rough_vectors: IntArray
    rough_mask: BoolArray
    energy: FloatArray
    response: FloatArray
    radius: int
    interval: int = 1
    energy_evaluations: int = 0
    exhaustive_evaluations: int = 0
    degenerate_cells: int = 0

    def __post_init__(self) -> None:
        self.clean()

    def clean(self) -> None:
        """Validate shapes and vector bounds.

        Raises:
            ValidationError: If the grids differ in shape or a defined vector exceeds the radius
        """
        shape = self.moving.shape
        if self.vectors.shape != (*shape, 2) or self.rough_vectors.shape != (*shape, 2):
            raise ValidationError("Motion field vector grids must have shape (rows, cols, 2).")
        for name in ("defined", "score", "rough_mask", "energy", "response"):
            if getattr(self, name).shape != shape:
                raise ValidationError(f"Motion field grid {name} has shape {getattr(self, name).shape}.")
        if self.defined.any() and np.abs(self.vectors[self.defined]).max() > self.radius * self.interval + 1e-9:
            raise ValidationError("Motion vector exceeds the search radius.")

    @property
    def shape(self) -> tuple[int, int]:
        rows, cols = self.moving.shape
        return (rows, cols)

    @property
    def magnitude(self) -> FloatArray:
        return np.asarray(np.hypot(self.vectors[..., 0], self.vectors[..., 1]))

    @classmethod
    def empty(cls, shape: tuple[int, int], radius: int, interval: int = 1) -> "MotionField":
        zeros = np.zeros(shape)
        flags = np.zeros(shape, dtype=bool)
        return cls(
            np.zeros((*shape, 2)),
            flags,
            zeros,
            flags.copy(),
            np.zeros((*shape, 2), dtype=np.int64),
            flags.copy(),
            zeros.copy(),
            zeros.copy(),
            radius,
            interval,
        )


def lateral_inhibition(field: MotionField, kernel: InhibitionKernel, threshold: float) -> MotionField:
    """Suppress motion shared by a whole neighborhood.

    Both vector components, zero where undefined, are convolved with the
    zero-sum ring kernel. A cell stays moving when it was moving before and
    the filtered magnitude reaches the threshold; other cells are cleared.
    Surviving cells keep their unfiltered vectors.

    Args:
        field: Motion field before inhibition
        kernel: Ring kernel
        threshold: Minimum filtered magnitude

    Returns:
        The inhibited field with ``response`` set to the filtered magnitude

    Raises:
        ConfigurationError: If the kernel violates its zero-sum identity
    """
    kernel.clean()
    weights = kernel.matrix()
    vx = np.where(field.defined, field.vectors[..., 0], 0.0)
    vy = np.where(field.defined, field.vectors[..., 1], 0.0)
    fx = ndimage.convolve(vx, weights, mode="constant", cval=0.0)
    fy = ndimage.convolve(vy, weights, mode="constant", cval=0.0)
    response = np.hypot(fx, fy)
    moving = field.moving & (response >= threshold - 1e-9)
    vectors = np.where(moving[..., None], field.vectors, 0.0)
    return dataclasses.replace(field, vectors=vectors, defined=moving.copy(), moving=moving, response=response)


def _match_chunk(
    context: _MatchContext,
    cells: IntArray,
    rough: RoughField,
    radius: int,
    weights: tuple[float, float, float],
    full_disc: bool,
) -> list[MatchResult]:
    results = []
    for row, col in cells:
        bisector = (0, 0) if full_disc else (int(rough.x_sm[row, col]), int(rough.y_sm[row, col]))
        sector = build_sector(bisector, radius, (int(row), int(col)))
        results.append(context.match((int(row), int(col)), sector, weights))
    return results


def detect_motion(
    frame_t: BevMaps,
    history: Sequence[BevMaps],
    state: LowPassState,
    config: SearchConfig,
    kernel: InhibitionKernel,
    workers: int = 1,
    interval: int = 1,
) -> MotionField:
    """Run one detection step against the last map of the history.

    Args:
        frame_t: Maps of the current frame
        history: Earlier maps, compensated into the current frame; the last one is matched against
        state: Low-pass state, advanced with the current occupancy
        config: Search parameters
        kernel: Lateral inhibition kernel
        workers: Threads used for the exact match
        interval: Frames between the matched maps

    Returns:
        The inhibited motion field with its energy-evaluation counts

    Raises:
        ValidationError: If the history is empty or the grids differ
    """
    if not history:
        raise ValidationError("Motion detection needs at least one earlier frame.")
    maps_prev = history[-1]
    filtered = lowpass_step(state, frame_t.occupancy)
    rough = fast_search(frame_t.occupancy, filtered, config)

    radius = config.max_distance
    weights = config.weights
    full_disc = config.strategy != "c2f"
    if config.strategy == "exhaustive":
        candidates = frame_t.occupied
    else:
        candidates = rough.mask
    if config.strategy == "coarse":
        weights = (1.0, 0.0, 0.0)
    cells = np.argwhere(candidates)

    context = _MatchContext(frame_t, maps_prev, radius, config.patch_size)
    chunks = [chunk for chunk in np.array_split(cells, max(1, workers)) if len(chunk)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_match_chunk, context, chunk, rough, radius, weights, full_disc) for chunk in chunks
            ]
            parts = [future.result() for future in futures]
    else:
        parts = [_match_chunk(context, chunk, rough, radius, weights, full_disc) for chunk in chunks]
    results = [result for part in parts for result in part]

    shape = frame_t.shape
    vectors = np.zeros((*shape, 2))
    defined = np.zeros(shape, dtype=bool)
    energy = np.zeros(shape)
    for (row, col), result in zip(cells, results):
        vectors[row, col] = (result.x, result.y)
        defined[row, col] = True
        energy[row, col] = result.energy
    magnitude = np.hypot(vectors[..., 0], vectors[..., 1])
    moving = defined & (magnitude >= config.moving_magnitude_threshold)

    field = MotionField(
        vectors=vectors,
        defined=defined,
        score=np.where(np.isfinite(rough.score), rough.score, 0.0),
        moving=moving,
        rough_vectors=rough.vectors,
        rough_mask=rough.mask,
        energy=energy,
        response=np.zeros(shape),
        radius=radius,
        interval=interval,
        energy_evaluations=sum(result.evaluations for result in results),
        exhaustive_evaluations=usable_offset_count(
            shape, np.argwhere(frame_t.occupied), build_sector((0, 0), radius).offsets, config.patch_size // 2
        ),
        degenerate_cells=sum(result.degenerate for result in results),
    )
    inhibited = lateral_inhibition(field, kernel, config.moving_magnitude_threshold)
    logger.debug(
        "Interval %d: %d rough cells, %d moving after inhibition, %d energy evaluations.",
        interval,
        int(rough.mask.sum()),
        int(inhibited.moving.sum()),
        inhibited.energy_evaluations,
    )
    return inhibited
