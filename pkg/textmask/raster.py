"""
Raster Mask Representations.

Geometric substrate shared by every codec:

    - LabelMask: full-resolution mask of label ids (pixels)
    - LabelGrid: R x C grid of label ids (the downsampled mask a descriptor
      sequence encodes)
    - BinaryGrid: R x C grid of {0, 1} (one instance)
    - BoxBins: inclusive box corners in grid/bin coordinates
    - PixelBox: inclusive box corners in pixel coordinates

All containers are frozen and hold read-only numpy arrays, so they can be
shared freely between threads.

Coordinate conventions:
    - arrays are row-major, indexed ``[row, col]`` / ``[y, x]``
    - boxes are inclusive: a single cell is ``(c, r, c, r)``
    - a pixel (or cell) with index i belongs to target cell
      ``floor((i + 0.5) * n_target / n_source)`` (its center decides)
"""

from dataclasses import dataclass
from typing import Annotated, Optional, Sequence, TypeAlias

import numpy as np

from .diagnostics import LabelError
from .labels import BINARY_TABLE, LabelTable


# ============================================================================
# Type Aliases
# ============================================================================

LabelId: TypeAlias = Annotated[int, "Label id (key into a LabelTable)"]
Bits: TypeAlias = Annotated[np.ndarray, "uint8 array of {0, 1}"]


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_ids(ids: np.ndarray, table: LabelTable) -> None:
    present = np.unique(ids)
    missing = [int(v) for v in present if int(v) not in table]
    if missing:
        raise LabelError(f"Label ids {missing} are not in the label table")


# ============================================================================
# Containers
# ============================================================================

@dataclass(frozen=True, eq=False)
class LabelMask:
    """Source segmentation mask: ``data[y, x]`` is the label id of a pixel."""
    data: np.ndarray
    table: LabelTable

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"Mask must be a non-empty 2D array, got shape {data.shape}")
        _check_ids(data, self.table)
        object.__setattr__(self, "data", _frozen(data, np.int64))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.table == other.table and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """R x C grid of label ids: ``cells[r, c]``."""
    cells: np.ndarray
    table: LabelTable

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError(f"Grid must be a non-empty 2D array, got shape {cells.shape}")
        _check_ids(cells, self.table)
        object.__setattr__(self, "cells", _frozen(cells, np.int64))

    @classmethod
    def from_labels(cls, rows: Sequence[Sequence[str]], table: LabelTable) -> "LabelGrid":
        """Build a grid from nested lists of label texts."""
        ids = []
        for row in rows:
            out = []
            for label in row:
                label_id = table.id_of(label)
                if label_id is None:
                    raise LabelError(f"Label {label!r} is not in the label table")
                out.append(label_id)
            ids.append(out)
        return cls(np.array(ids, dtype=np.int64), table)

    @classmethod
    def filled(cls, rows: int, cols: int, table: LabelTable, label_id: int = 0) -> "LabelGrid":
        return cls(np.full((rows, cols), label_id, dtype=np.int64), table)

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    def to_labels(self) -> list:
        """Nested lists of label texts (row-major)."""
        return [[self.table.label_of(v) for v in row] for row in self.cells.tolist()]

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return self.table == other.table and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        return f"LabelGrid({self.rows}x{self.cols}, labels={self.table.labels!r})"


@dataclass(frozen=True, eq=False)
class BinaryGrid:
    """R x C grid of {0, 1}: ``bits[r, c]``."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"Binary grid must be a non-empty 2D array, got shape {bits.shape}")
        if bits.dtype != bool and not np.isin(bits, (0, 1)).all():
            raise ValueError("Binary grid values must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(bits != 0, np.uint8))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BinaryGrid":
        return cls(np.zeros((rows, cols), dtype=np.uint8))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def __eq__(self, other):
        if not isinstance(other, BinaryGrid):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"BinaryGrid({self.rows}x{self.cols}, area={self.area})"


@dataclass(frozen=True)
class BoxBins:
    """Inclusive box in bin coordinates: ``0 <= x1 <= x2``, ``0 <= y1 <= y2``."""
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if min(self.x1, self.y1) < 0:
            raise ValueError(f"Box corners must be non-negative: {self}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"Box corners out of order: {self}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def fits(self, resolution: int) -> bool:
        return self.x2 < resolution and self.y2 < resolution

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class PixelBox:
    """Inclusive pixel rectangle."""
    left: int
    top: int
    right: int
    bottom: int


# ============================================================================
# Resampling
# ============================================================================

def _source_to_target(n_source: int, n_target: int) -> np.ndarray:
    """Target index owning each source index (center rule, integer exact)."""
    idx = np.arange(n_source, dtype=np.int64)
    return ((2 * idx + 1) * n_target) // (2 * n_source)


def downsample_mask(mask: LabelMask, rows: int, cols: int) -> LabelGrid:
    """
    Majority-vote resize of a mask to a ``rows x cols`` grid.

    Each cell takes the most frequent label among the source pixels whose
    centers fall inside its footprint; ties go to the smallest id. Cells
    whose footprint holds no pixel center (only when upsampling) take the
    label of the pixel nearest to the cell center.

    Examples:
        >>> table = LabelTable.from_labels(["a"])
        >>> m = LabelMask(np.array([[0, 0], [0, 1]]), table)
        >>> downsample_mask(m, 1, 1).cells.tolist()
        [[0]]
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"Grid size must be at least 1x1, got {rows}x{cols}")
    data = mask.data
    height, width = data.shape

    ids, dense = np.unique(data, return_inverse=True)
    dense = dense.reshape(height, width)
    n_labels = len(ids)

    row_of = _source_to_target(height, rows)
    col_of = _source_to_target(width, cols)
    cell = row_of[:, None] * cols + col_of[None, :]
    counts = np.bincount(
        (cell * n_labels + dense).ravel(), minlength=rows * cols * n_labels
    ).reshape(rows * cols, n_labels)
    # ids are sorted ascending, so argmax picks the smallest id on ties
    winners = ids[np.argmax(counts, axis=1)].reshape(rows, cols)

    empty = counts.sum(axis=1).reshape(rows, cols) == 0
    if empty.any():
        near_y = np.minimum(((2 * np.arange(rows) + 1) * height) // (2 * rows), height - 1)
        near_x = np.minimum(((2 * np.arange(cols) + 1) * width) // (2 * cols), width - 1)
        nearest = data[near_y[:, None], near_x[None, :]]
        winners = np.where(empty, nearest, winners)

    return LabelGrid(winners, mask.table)


def upsample_grid(grid: LabelGrid, width: int, height: int) -> LabelMask:
    """
    Nearest-cell resize of a grid to a ``width x height`` mask.

    Lossy: ``upsample_grid(downsample_mask(m, R, R), w, h)`` is generally not
    ``m``.
    """
    if width < 1 or height < 1:
        raise ValueError(f"Mask size must be at least 1x1, got {width}x{height}")
    row_of = _source_to_target(height, grid.rows)
    col_of = _source_to_target(width, grid.cols)
    return LabelMask(grid.cells[row_of[:, None], col_of[None, :]], grid.table)


# ============================================================================
# Binary Views and Boxes
# ============================================================================

def binarize(grid: LabelGrid, target: int) -> BinaryGrid:
    """Bit = 1 where the cell holds ``target``."""
    if target not in grid.table:
        raise LabelError(f"Target id {target} is not in the label table")
    return BinaryGrid(grid.cells == target)


def binary_mask_grid(bits: np.ndarray, rows: int, cols: int) -> BinaryGrid:
    """Majority-vote resize of a full-resolution binary mask to ``rows x cols``."""
    grid = downsample_mask(LabelMask(np.asarray(bits) != 0, BINARY_TABLE), rows, cols)
    return binarize(grid, 1)


def tight_box(bits: BinaryGrid) -> Optional[BoxBins]:
    """
    Smallest inclusive box holding every set bit, or ``None`` when empty.

    Examples:
        >>> g = np.zeros((8, 8), dtype=np.uint8); g[3, 5] = 1
        >>> tight_box(BinaryGrid(g))
        BoxBins(x1=5, y1=3, x2=5, y2=3)
    """
    ys = np.flatnonzero(bits.bits.any(axis=1))
    if ys.size == 0:
        return None
    xs = np.flatnonzero(bits.bits.any(axis=0))
    return BoxBins(int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1]))


def crop(bits: BinaryGrid, box: BoxBins) -> np.ndarray:
    """The in-box sub-grid of ``bits`` (row-major, read-only view)."""
    return bits.bits[box.y1:box.y2 + 1, box.x1:box.x2 + 1]


def _bin(coord: int, extent: int, resolution: int) -> int:
    return min(max((coord * resolution) // extent, 0), resolution - 1)


def quantize_box(px_box: PixelBox, width: int, height: int, resolution: int = 64) -> BoxBins:
    """
    Quantize a pixel rectangle into ``resolution`` bins per axis.

    ``bin(c, extent) = floor(c * R / extent)``, clamped to ``[0, R - 1]``.

    Examples:
        >>> quantize_box(PixelBox(400, 0, 799, 599), 800, 600)
        BoxBins(x1=32, y1=0, x2=63, y2=63)
    """
    if resolution < 1:
        raise ValueError(f"Resolution must be >= 1, got {resolution}")
    if not (0 <= px_box.left <= px_box.right < width):
        raise ValueError(f"Horizontal extent {px_box} outside width {width}")
    if not (0 <= px_box.top <= px_box.bottom < height):
        raise ValueError(f"Vertical extent {px_box} outside height {height}")
    return BoxBins(
        _bin(px_box.left, width, resolution),
        _bin(px_box.top, height, resolution),
        _bin(px_box.right, width, resolution),
        _bin(px_box.bottom, height, resolution),
    )
