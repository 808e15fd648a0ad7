"""
Image-Wise Semantic Descriptor Codec.

A ``LabelGrid`` is written as text by replacing every cell with its label:

    FULL   sky|sky|sand          one descriptor per cell, ``|`` between cells,
           sky|sand|sand         newline between rows
    IRLE   sky*2|sand|sky|sand*2 runs over the flattened grid, no newlines
    RRLE   sky*2|sand            runs within each row, newline between rows
           sky|sand*2

A run of one is written as the bare label; longer runs as ``label*count``.
Separators never trail.

The codec is a Construct ``Adapter`` over a UTF-8 string, so every kind has a
symmetric ``build`` (grid -> bytes) and ``parse`` (bytes -> grid):

    >>> table = LabelTable.from_labels(["a", "b"])
    >>> codec = IsdPayload(DescriptorKind.RRLE, 2, 2, table)
    >>> codec.build(LabelGrid.from_labels([["a", "a"], ["a", "b"]], table))
    b'a*2\\na|b'

``encode_full`` / ``encode_irle`` / ``encode_rrle`` / ``decode`` wrap it with
str payloads.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
from construct import Adapter, Construct, GreedyString

from .diagnostics import Diagnostic, DiagnosticSink, EncodingError, ParseMode
from .labels import BACKGROUND_ID, LabelTable
from .raster import LabelGrid


logger = logging.getLogger(__name__)


DESCRIPTOR_SEP = "|"
ROW_SEP = "\n"
RUN_MARK = "*"


def read_count(text: str, limit: int) -> Optional[int]:
    """
    Parse a run count, or None when it is not a positive integer.

    Counts with more digits than ``limit`` come back as ``limit + 1`` without
    converting the digit string.
    """
    if not (text.isascii() and text.isdigit()):
        return None
    digits = text.lstrip("0")
    if not digits:
        return None
    if len(digits) > len(str(limit)):
        return limit + 1
    return int(digits)


class DescriptorKind(str, Enum):
    FULL = "full"
    IRLE = "irle"
    RRLE = "rrle"


@dataclass(frozen=True)
class Run:
    """A maximal run of one label id."""
    label_id: int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"Run count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class DescriptorText:
    """A serialized descriptor payload and the grid shape it encodes."""
    kind: DescriptorKind
    payload: str
    rows: int
    cols: int

    def runs(self) -> List[List[Tuple[str, int]]]:
        """``(label, count)`` pairs per line (one line for IRLE)."""
        out = []
        limit = self.rows * self.cols
        for line in self.payload.split(ROW_SEP):
            items = []
            for item in line.split(DESCRIPTOR_SEP):
                label, star, count = item.partition(RUN_MARK)
                items.append((label, (read_count(count, limit) or 1) if star else 1))
            out.append(items)
        return out

    @property
    def descriptor_count(self) -> int:
        """Number of cells the payload describes (sum of run counts)."""
        return sum(count for line in self.runs() for _, count in line)


class DecodedGrid(NamedTuple):
    grid: LabelGrid
    diagnostics: List[Diagnostic]


# ============================================================================
# Encoding
# ============================================================================

def format_run(label: str, count: int) -> str:
    return label if count == 1 else f"{label}{RUN_MARK}{count}"


def find_runs(values: np.ndarray, row_length: Optional[int] = None) -> List[Run]:
    """
    Maximal runs of a 1D id sequence.

    With ``row_length`` set, a new run also starts at every row boundary.
    """
    values = np.asarray(values).ravel()
    if values.size == 0:
        return []
    starts, counts = _run_bounds(values, row_length)
    return [Run(int(v), int(c)) for v, c in zip(values[starts], counts)]


def _run_bounds(flat: np.ndarray, row_length: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    change = np.empty(flat.size, dtype=bool)
    change[0] = True
    change[1:] = flat[1:] != flat[:-1]
    if row_length:
        change[::row_length] = True
    starts = np.flatnonzero(change)
    counts = np.diff(np.append(starts, flat.size))
    return starts, counts


def _label_names(grid: LabelGrid) -> dict:
    names = dict(grid.table.entries)
    for label_id in np.unique(grid.cells).tolist():
        if label_id not in names:
            raise EncodingError(f"Label id {label_id} has no text in the label table",
                                rule="unknown-id")
    return names


def _serialize(grid: LabelGrid, kind: DescriptorKind) -> str:
    names = _label_names(grid)
    if kind is DescriptorKind.FULL:
        return ROW_SEP.join(
            DESCRIPTOR_SEP.join(names[v] for v in row) for row in grid.cells.tolist()
        )

    flat = grid.cells.ravel()
    starts, counts = _run_bounds(flat, grid.cols if kind is DescriptorKind.RRLE else None)
    tokens = [format_run(names[v], c) for v, c in zip(flat[starts].tolist(), counts.tolist())]
    if kind is DescriptorKind.IRLE:
        return DESCRIPTOR_SEP.join(tokens)

    lines: List[List[str]] = [[] for _ in range(grid.rows)]
    for row, token in zip((starts // grid.cols).tolist(), tokens):
        lines[row].append(token)
    return ROW_SEP.join(DESCRIPTOR_SEP.join(line) for line in lines)


# ============================================================================
# Decoding
# ============================================================================

class _Expander:
    """Expands descriptor items into at most ``capacity`` cell ids."""

    def __init__(self, table: LabelTable, sink: DiagnosticSink, allow_runs: bool):
        self.table = table
        self.sink = sink
        self.allow_runs = allow_runs

    def item(self, item: str, index: int, capacity: int) -> Optional[Tuple[int, int]]:
        if not item:
            self.sink.report("empty-descriptor", index, "Empty descriptor between separators")
            return None
        label, star, count_text = item.partition(RUN_MARK)
        count = 1
        if star:
            if not self.allow_runs:
                self.sink.report("run-in-full", index, f"Run {item!r} in a FULL payload")
            parsed = read_count(count_text, capacity)
            if parsed is not None:
                count = parsed
            else:
                self.sink.report("malformed-run", index + len(label),
                                 f"Run count {count_text[:20]!r} is not a positive integer")
        label_id = self.table.id_of(label)
        if label_id is None:
            self.sink.report("unknown-label", index, f"Unknown label {label!r}")
            label_id = BACKGROUND_ID
        return label_id, count

    def line(self, text: str, start: int, capacity: int) -> Tuple[List[int], int]:
        """Cell ids for one stretch of items (clipped to capacity) and the true total."""
        cells: List[int] = []
        total = 0
        if not text:
            return cells, total
        index = start
        for item in text.split(DESCRIPTOR_SEP):
            parsed = self.item(item, index, capacity)
            index += len(item) + 1
            if parsed is None:
                continue
            label_id, count = parsed
            room = capacity - len(cells)
            if room > 0:
                cells.extend([label_id] * min(count, room))
            total += count
        return cells, total


def _fit(sink: DiagnosticSink, cells: List[int], total: int, capacity: int,
         index: int, where: str) -> List[int]:
    if total > capacity:
        sink.report("cell-overflow", index,
                    f"{where} holds more than {capacity} cells; truncated")
    elif total < capacity:
        sink.report("cell-shortfall", index,
                    f"{where} holds {total} cells, expected {capacity}; padded with background")
        cells = cells + [BACKGROUND_ID] * (capacity - len(cells))
    return cells


def _deserialize(payload: str, kind: DescriptorKind, rows: int, cols: int,
                 table: LabelTable, strict: bool) -> DecodedGrid:
    sink = DiagnosticSink(payload, strict)
    expander = _Expander(table, sink, allow_runs=kind is not DescriptorKind.FULL)

    if kind is DescriptorKind.IRLE:
        newline = payload.find(ROW_SEP)
        if newline >= 0:
            sink.report("newline-in-irle", newline, "IRLE payload contains a row separator")
            payload = payload.replace(ROW_SEP, DESCRIPTOR_SEP)
        capacity = rows * cols
        cells, total = expander.line(payload, 0, capacity)
        cells = _fit(sink, cells, total, capacity, len(payload), "Payload")
        return DecodedGrid(LabelGrid(np.array(cells, dtype=np.int64).reshape(rows, cols), table),
                           sink.diagnostics)

    lines = payload.split(ROW_SEP)
    if len(lines) != rows:
        sink.report("row-count", len(payload),
                    f"Payload has {len(lines)} rows, expected {rows}")
    grid = np.full((rows, cols), BACKGROUND_ID, dtype=np.int64)
    index = 0
    for r, line in enumerate(lines[:rows]):
        cells, total = expander.line(line, index, cols)
        cells = _fit(sink, cells, total, cols, index + len(line), f"Row {r}")
        grid[r] = cells
        index += len(line) + 1
    return DecodedGrid(LabelGrid(grid, table), sink.diagnostics)


# ============================================================================
# Construct Adapter
# ============================================================================

class IsdPayloadAdapter(Adapter):
    """
    Adapter between ``LabelGrid`` and UTF-8 descriptor payload bytes.

    Building encodes a grid in the adapter's kind; parsing decodes a payload
    into a ``DecodedGrid`` (strict unless ``lenient`` is set).
    """

    def __init__(self, kind: DescriptorKind, rows: int, cols: int,
                 table: LabelTable, lenient: bool = False):
        if rows < 1 or cols < 1:
            raise ValueError(f"Grid size must be at least 1x1, got {rows}x{cols}")
        super().__init__(GreedyString("utf8"))
        self.kind = DescriptorKind(kind)
        self.rows = rows
        self.cols = cols
        self.table = table
        self.lenient = lenient

    def _encode(self, obj: LabelGrid, context, path) -> str:
        if (obj.rows, obj.cols) != (self.rows, self.cols):
            raise EncodingError(
                f"Grid is {obj.rows}x{obj.cols}, codec expects {self.rows}x{self.cols}",
                rule="grid-shape",
            )
        return _serialize(obj, self.kind)

    def _decode(self, obj: str, context, path) -> DecodedGrid:
        decoded = _deserialize(obj, self.kind, self.rows, self.cols, self.table,
                               strict=not self.lenient)
        if decoded.diagnostics:
            logger.debug("I-SD parse repaired %d issue(s)", len(decoded.diagnostics))
        return decoded


def IsdPayload(kind: DescriptorKind, rows: int, cols: int, table: LabelTable,
               lenient: bool = False) -> Construct:
    """
    Create a descriptor payload construct for one grid shape and label table.

    Args:
        kind: FULL, IRLE or RRLE.
        rows, cols: Grid shape.
        table: Label table naming every id.
        lenient: Repair malformed payloads instead of raising.

    Returns:
        Construct whose ``build`` takes a ``LabelGrid`` and whose ``parse``
        returns a ``DecodedGrid``.
    """
    return IsdPayloadAdapter(kind, rows, cols, table, lenient)


# ============================================================================
# Public API
# ============================================================================

def encode(grid: LabelGrid, kind: Union[DescriptorKind, str]) -> DescriptorText:
    kind = DescriptorKind(kind)
    codec = IsdPayload(kind, grid.rows, grid.cols, grid.table)
    return DescriptorText(kind, codec.build(grid).decode("utf-8"), grid.rows, grid.cols)


def encode_full(grid: LabelGrid) -> DescriptorText:
    """One descriptor per cell, ``|`` within rows, newline between rows."""
    return encode(grid, DescriptorKind.FULL)


def encode_irle(grid: LabelGrid) -> DescriptorText:
    """Maximal runs over the row-major flattened grid, ignoring row boundaries."""
    return encode(grid, DescriptorKind.IRLE)


def encode_rrle(grid: LabelGrid) -> DescriptorText:
    """Maximal runs within each row, newline between rows."""
    return encode(grid, DescriptorKind.RRLE)


def decode(text: str, kind: Union[DescriptorKind, str], rows: int, cols: int,
           table: LabelTable, mode: Union[ParseMode, str] = ParseMode.STRICT) -> DecodedGrid:
    """
    Decode a descriptor payload back into a grid.

    Strict mode raises ``GrammarError`` on unknown labels, malformed runs,
    wrong row counts (FULL/RRLE) or cell-count mismatches. Lenient mode maps
    unknown labels to the background, truncates overflow, pads shortfall
    with the background and reports every repair in ``diagnostics``.

    Examples:
        >>> table = LabelTable.from_labels(["a", "b"])
        >>> decode("a*3|b", "irle", 2, 2, table).grid.to_labels()
        [['a', 'a'], ['a', 'b']]
    """
    lenient = ParseMode(mode) is ParseMode.LENIENT
    return IsdPayload(kind, rows, cols, table, lenient).parse(text.encode("utf-8"))


def decode_descriptor(desc: DescriptorText, table: LabelTable,
                      mode: Union[ParseMode, str] = ParseMode.STRICT) -> DecodedGrid:
    return decode(desc.payload, desc.kind, desc.rows, desc.cols, table, mode)


def detect_kind(payload: str, rows: int) -> DescriptorKind:
    """
    Guess the encoding of a payload.

    Multi-row payloads without newlines are IRLE; otherwise RRLE, which also
    decodes run-free (FULL) payloads.
    """
    if rows > 1 and ROW_SEP not in payload:
        return DescriptorKind.IRLE
    return DescriptorKind.RRLE
