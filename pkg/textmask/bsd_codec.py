"""
Box-Wise Semantic Descriptor Codec.

One grounded instance is written as a record:

    <ref>black dog</ref><box>[[12 4 30 20]]</box><seg>bg5 fg12 bg3 ...</seg>

    - ref:  referent text (expression, class name, or ``roiN``)
    - box:  inclusive corners on the R x R canvas (default 64)
    - seg:  semantic bricks encoding the in-box binary mask in raster order

A semantic brick is one of 126 vocabulary tokens: ``fg1..fg63`` (a run of
foreground cells) and ``bg1..bg63`` (a run of background cells). Runs cross
box-row boundaries; runs longer than 63 are split into 63-bricks plus a
remainder. A query without a target is written ``<ref>R</ref><box>[[]]</box><seg></seg>``.

Without bricks, the ``seg`` payload is the in-box mask as an R-RLE descriptor
payload over the labels ``fg``/``bg`` (``bg*3|fg*2\\nfg|bg*4``); the parser
detects this variant automatically.

Records can also be packed into a compact binary form (``pack_records``):

    PackedRecords = PrefixedArray(Int32ub, PackedRecord)
    PackedRecord:
        - referent:   PascalString(Int32ub, "utf8")
        - canvas_res: Int16ub
        - has_box:    Flag
        - box:        If(has_box, Array(4, Int16ub))
        - bricks:     PrefixedArray(Int32ub, BitStruct(foreground: Flag, length: BitsInteger(7)))
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Iterable, List, NamedTuple, Optional, Sequence, Tuple, TypeAlias, Union

import numpy as np
from construct import (
    Adapter, Array, BitStruct, BitsInteger, Construct, Flag, GreedyString,
    If, Int16ub, Int32ub, PascalString, PrefixedArray, Struct, this,
)

from .diagnostics import (
    Diagnostic, DiagnosticSink, GrammarError, LabelError, ParseMode,
)
from .isd_codec import DescriptorKind, decode as decode_isd, encode_rrle, find_runs
from .labels import BINARY_TABLE, LabelTable
from .raster import BinaryGrid, BoxBins, LabelGrid, crop, tight_box


logger = logging.getLogger(__name__)

BRICK_MAX = 63
DEFAULT_CANVAS = 64
MARKERS = ("<ref>", "</ref>", "<box>", "</box>", "<seg>", "</seg>")


# ============================================================================
# Bricks
# ============================================================================

class Polarity(str, Enum):
    FG = "fg"
    BG = "bg"

    @property
    def bit(self) -> int:
        return 1 if self is Polarity.FG else 0


@dataclass(frozen=True)
class BrickToken:
    """A run of ``length`` cells of one polarity (``fg12``, ``bg3``)."""
    polarity: Polarity
    length: int

    def __post_init__(self):
        if not 1 <= self.length <= BRICK_MAX:
            raise ValueError(f"Brick length must be in [1, {BRICK_MAX}], got {self.length}")

    @property
    def name(self) -> str:
        return f"{self.polarity.value}{self.length}"

    @property
    def token_id(self) -> int:
        """Index into ``BRICK_VOCABULARY`` (fg1 = 0 ... fg63 = 62, bg1 = 63 ... bg63 = 125)."""
        offset = 0 if self.polarity is Polarity.FG else BRICK_MAX
        return offset + self.length - 1

    @classmethod
    def from_name(cls, name: str) -> "BrickToken":
        try:
            return _BRICKS_BY_NAME[name]
        except KeyError:
            raise ValueError(f"{name!r} is not a semantic brick") from None

    def __str__(self) -> str:
        return self.name


BrickSeq: TypeAlias = Annotated[Tuple[BrickToken, ...], "Bricks in raster order"]

BRICK_VOCABULARY: Tuple[str, ...] = tuple(
    f"{p.value}{n}" for p in (Polarity.FG, Polarity.BG) for n in range(1, BRICK_MAX + 1)
)

_BRICKS_BY_NAME = {
    name: BrickToken(Polarity(name[:2]), int(name[2:])) for name in BRICK_VOCABULARY
}


def _run_bricks(polarity: Polarity, count: int) -> List[BrickToken]:
    full, rest = divmod(count, BRICK_MAX)
    out = [BrickToken(polarity, BRICK_MAX)] * full
    if rest:
        out.append(BrickToken(polarity, rest))
    return out


def bricks_from_bits(bits: Union[np.ndarray, Sequence[int]]) -> BrickSeq:
    """
    Greedy maximal-run brick encoding of a raster-ordered bit sequence.

    Examples:
        >>> [b.name for b in bricks_from_bits([1] * 64)]
        ['fg63', 'fg1']
        >>> [b.name for b in bricks_from_bits([1, 0, 1])]
        ['fg1', 'bg1', 'fg1']
    """
    bits = np.asarray(bits).ravel()
    if bits.size == 0:
        raise ValueError("Cannot encode an empty bit sequence")
    if bits.dtype != bool and not np.isin(bits, (0, 1)).all():
        raise ValueError("Bit sequence values must be 0 or 1")
    out: List[BrickToken] = []
    for run in find_runs(bits.astype(np.uint8)):
        out.extend(_run_bricks(Polarity.FG if run.label_id else Polarity.BG, run.count))
    return tuple(out)


def bits_from_bricks(seq: Iterable[BrickToken]) -> np.ndarray:
    """Expand bricks into a uint8 bit array; non-canonical sequences are accepted."""
    seq = list(seq)
    return np.repeat(
        np.array([b.polarity.bit for b in seq], dtype=np.uint8),
        [b.length for b in seq],
    ).astype(np.uint8)


def is_canonical(seq: Sequence[BrickToken]) -> bool:
    """Adjacent same-polarity bricks only follow a full 63-brick."""
    return all(
        prev.polarity is not cur.polarity or prev.length == BRICK_MAX
        for prev, cur in zip(seq, seq[1:])
    )


# ============================================================================
# Records
# ============================================================================

def check_referent(referent: str) -> str:
    if not isinstance(referent, str):
        raise LabelError(f"Referent must be a string, got {referent!r}")
    found = [m for m in MARKERS if m in referent]
    if found:
        raise LabelError(f"Referent {referent!r} contains reserved marker(s) {found}")
    return referent


@dataclass(frozen=True)
class BsdRecord:
    """
    One grounded instance.

    ``box`` is ``None`` for the no-target result, in which case ``bricks``
    is empty.
    """
    referent: str
    box: Optional[BoxBins]
    bricks: BrickSeq = ()
    canvas_res: int = DEFAULT_CANVAS

    def __post_init__(self):
        check_referent(self.referent)
        object.__setattr__(self, "bricks", tuple(self.bricks))
        if self.canvas_res < 1:
            raise ValueError(f"Canvas resolution must be >= 1, got {self.canvas_res}")
        if self.box is None:
            if self.bricks:
                raise ValueError("A record without a box cannot carry bricks")
            return
        if not self.box.fits(self.canvas_res):
            raise ValueError(f"Box {self.box.as_tuple()} exceeds the {self.canvas_res}x{self.canvas_res} canvas")
        total = sum(b.length for b in self.bricks)
        if total != self.box.area:
            raise ValueError(f"Bricks cover {total} cells, box holds {self.box.area}")

    @property
    def is_empty(self) -> bool:
        return self.box is None

    def in_box_bits(self) -> np.ndarray:
        """The in-box mask as a ``(height, width)`` uint8 array."""
        if self.box is None:
            raise ValueError("No-target record has no in-box mask")
        return bits_from_bricks(self.bricks).reshape(self.box.height, self.box.width)


def encode_record(mask_bits: BinaryGrid, referent: str) -> BsdRecord:
    """
    Encode one instance mask drawn on a square canvas.

    An all-zero mask yields the no-target record.

    Examples:
        >>> g = np.zeros((64, 64), dtype=np.uint8); g[0, 0] = 1
        >>> record = encode_record(BinaryGrid(g), "black dog")
        >>> record.box.as_tuple(), [b.name for b in record.bricks]
        ((0, 0, 0, 0), ['fg1'])
    """
    check_referent(referent)
    if mask_bits.rows != mask_bits.cols:
        raise ValueError(f"Canvas must be square, got {mask_bits.rows}x{mask_bits.cols}")
    box = tight_box(mask_bits)
    if box is None:
        return BsdRecord(referent, None, (), mask_bits.rows)
    return BsdRecord(referent, box, bricks_from_bits(crop(mask_bits, box)), mask_bits.rows)


# ============================================================================
# Text Serialization
# ============================================================================

def format_box(box: Optional[BoxBins]) -> str:
    if box is None:
        return "[[]]"
    return "[[{} {} {} {}]]".format(*box.as_tuple())


def _seg_payload(record: BsdRecord, use_bricks: bool) -> str:
    if record.box is None:
        return ""
    if use_bricks:
        return " ".join(b.name for b in record.bricks)
    return encode_rrle(LabelGrid(record.in_box_bits(), BINARY_TABLE)).payload


def format_record(record: BsdRecord, use_bricks: bool = True) -> str:
    return (
        f"<ref>{record.referent}</ref>"
        f"<box>{format_box(record.box)}</box>"
        f"<seg>{_seg_payload(record, use_bricks)}</seg>"
    )


# ============================================================================
# Text Parsing
# ============================================================================

_MARKER_RE = re.compile(r"</?(?:ref|box|seg)>")
_BOX_RE = re.compile(r"\[\[\s*(\d+)\s+(\d+)\s+(\d+)\s+(\d+)\s*\]\]")
_EMPTY_BOX_RE = re.compile(r"\[\[\s*\]\]")
_TOKEN_RE = re.compile(r"\S+")


class ParsedBsd(NamedTuple):
    records: List[BsdRecord]
    diagnostics: List[Diagnostic]


def _is_rrle_payload(seg: str) -> bool:
    return any(ch in seg for ch in "*|\n") or seg.strip() in ("fg", "bg")


class _BsdParser:
    """Cursor-based record scanner; every rule goes through the sink."""

    def __init__(self, text: str, sink: DiagnosticSink, canvas_res: int):
        self.text = text
        self.sink = sink
        self.canvas_res = canvas_res

    def _skip_ws(self, pos: int) -> int:
        while pos < len(self.text) and self.text[pos].isspace():
            pos += 1
        return pos

    def parse(self) -> List[BsdRecord]:
        text = self.text
        records: List[BsdRecord] = []
        pos = 0
        while True:
            pos = self._skip_ws(pos)
            if pos >= len(text):
                break
            m = _MARKER_RE.search(text, pos)
            if m is None:
                self.sink.report("stray-text", pos, f"Text {text[pos:pos + 20]!r} outside a record")
                break
            if m.start() > pos and m.group() != "</ref>":
                self.sink.report("stray-text", pos, f"Text {text[pos:m.start()][:20]!r} outside a record")
                pos = m.start()
                continue
            if m.start() == pos and m.group() in ("</ref>", "</box>", "</seg>"):
                self.sink.report("stray-marker", pos, f"Unexpected {m.group()}")
                pos = m.end()
                continue
            record, pos = self._record(pos, len(records))
            if record is not None:
                records.append(record)
        return records

    def _element(self, pos: int, tag: str) -> Tuple[Optional[str], int, int]:
        """Returns (content or None when absent, content start, position after)."""
        text = self.text
        open_, close = f"<{tag}>", f"</{tag}>"
        if text.startswith(open_, pos):
            start = pos + len(open_)
        else:
            here = _MARKER_RE.match(text, pos)
            if here is not None or pos >= len(text):
                self.sink.report(f"missing-{tag}", pos, f"Record has no {open_} element")
                return None, pos, pos
            self.sink.report("missing-marker", pos, f"Expected {open_}")
            start = pos
        m = _MARKER_RE.search(text, start)
        if m is None or m.group() != close:
            stop = len(text) if m is None else m.start()
            self.sink.report(f"unterminated-{tag}", stop, f"{open_} is not closed")
            return text[start:stop], start, stop
        return text[start:m.start()], start, m.end()

    def _record(self, pos: int, index: int) -> Tuple[Optional[BsdRecord], int]:
        referent, _, pos = self._element(pos, "ref")
        box_text, box_at, pos = self._element(self._skip_ws(pos), "box")
        seg_text, seg_at, pos = self._element(self._skip_ws(pos), "seg")

        if referent is None:
            referent = f"roi{index}"
        if box_text is None:
            return None, pos
        if _EMPTY_BOX_RE.fullmatch(box_text.strip()):
            if seg_text:
                self.sink.report("seg-without-box", seg_at, "No-target record carries a mask; ignored")
            return BsdRecord(referent, None, (), self.canvas_res), pos

        box = self._box(box_text, box_at)
        if box is None:
            return None, pos
        bricks = self._bricks(seg_text or "", seg_at, box)
        return BsdRecord(referent, box, bricks, self.canvas_res), pos

    def _coord(self, digits: str) -> int:
        # Past the canvas width; caught by the box-range clamp below.
        if len(digits.lstrip("0")) > len(str(self.canvas_res)):
            return self.canvas_res
        return int(digits)

    def _box(self, box_text: str, at: int) -> Optional[BoxBins]:
        m = _BOX_RE.fullmatch(box_text.strip())
        if m is not None:
            coords = [self._coord(v) for v in m.groups()]
        else:
            self.sink.report("malformed-box", at, f"Box {box_text[:30]!r} is not [[x1 y1 x2 y2]]")
            coords = [self._coord(v) for v in re.findall(r"\d+", box_text)]
            if len(coords) != 4:
                return None
        x1, y1, x2, y2 = coords
        if x1 > x2 or y1 > y2:
            self.sink.report("box-order", at, f"Box corners {coords} are out of order; swapped")
            x1, x2 = min(x1, x2), max(x1, x2)
            y1, y2 = min(y1, y2), max(y1, y2)
        limit = self.canvas_res - 1
        if max(x1, y1, x2, y2) > limit:
            self.sink.report("box-range", at, f"Box corners {coords} exceed canvas bin {limit}; clamped")
            x1, y1, x2, y2 = (min(v, limit) for v in (x1, y1, x2, y2))
        return BoxBins(x1, y1, x2, y2)

    def _bricks(self, seg: str, at: int, box: BoxBins) -> BrickSeq:
        if _is_rrle_payload(seg):
            return self._rrle_bricks(seg, at, box)

        bricks: List[BrickToken] = []
        for m in _TOKEN_RE.finditer(seg):
            name = m.group()
            brick = _BRICKS_BY_NAME.get(name)
            if brick is None:
                self.sink.report("unknown-brick", at + m.start(), f"{name!r} is not a semantic brick; skipped")
                continue
            bricks.append(brick)

        total = sum(b.length for b in bricks)
        end = at + len(seg)
        if total < box.area:
            self.sink.report("underfilled-seg", end,
                             f"Bricks cover {total} of {box.area} box cells; padded with background")
            bricks.extend(_run_bricks(Polarity.BG, box.area - total))
        elif total > box.area:
            self.sink.report("overfilled-seg", end,
                             f"Bricks cover {total} of {box.area} box cells; truncated")
            bricks = _truncate(bricks, box.area)
        return tuple(bricks)

    def _rrle_bricks(self, seg: str, at: int, box: BoxBins) -> BrickSeq:
        delta = self.sink.offset_of(at)
        mode = ParseMode.STRICT if self.sink.strict else ParseMode.LENIENT
        try:
            grid, diagnostics = decode_isd(seg, DescriptorKind.RRLE, box.height, box.width,
                                           BINARY_TABLE, mode)
        except GrammarError as e:
            raise e.shifted(delta) from None
        self.sink.extend(diagnostics, delta)
        return bricks_from_bits(grid.cells)


def _truncate(bricks: List[BrickToken], area: int) -> List[BrickToken]:
    out: List[BrickToken] = []
    left = area
    for b in bricks:
        if left <= 0:
            break
        out.append(b if b.length <= left else BrickToken(b.polarity, left))
        left -= b.length
    return out


# ============================================================================
# Construct Adapters
# ============================================================================

class BsdPayloadAdapter(Adapter):
    """
    Adapter between a list of ``BsdRecord`` and UTF-8 record text.

    Building serializes the records; parsing returns a ``ParsedBsd``.
    """

    def __init__(self, canvas_res: int = DEFAULT_CANVAS, use_bricks: bool = True,
                 lenient: bool = False):
        super().__init__(GreedyString("utf8"))
        self.canvas_res = canvas_res
        self.use_bricks = use_bricks
        self.lenient = lenient

    def _encode(self, obj: Sequence[BsdRecord], context, path) -> str:
        return "".join(format_record(r, self.use_bricks) for r in obj)

    def _decode(self, obj: str, context, path) -> ParsedBsd:
        sink = DiagnosticSink(obj, strict=not self.lenient)
        records = _BsdParser(obj, sink, self.canvas_res).parse()
        if sink.diagnostics:
            logger.debug("B-SD parse repaired %d issue(s)", len(sink.diagnostics))
        return ParsedBsd(records, sink.diagnostics)


def BsdPayload(canvas_res: int = DEFAULT_CANVAS, use_bricks: bool = True,
               lenient: bool = False) -> Construct:
    """Create a B-SD record-text construct."""
    return BsdPayloadAdapter(canvas_res, use_bricks, lenient)


PackedRecordStruct = Struct(
    "referent" / PascalString(Int32ub, "utf8"),
    "canvas_res" / Int16ub,
    "has_box" / Flag,
    "box" / If(this.has_box, Array(4, Int16ub)),
    "bricks" / PrefixedArray(Int32ub, BitStruct(
        "foreground" / Flag,
        "length" / BitsInteger(7),
    )),
)


class PackedRecordAdapter(Adapter):
    """Adapter between ``BsdRecord`` and ``PackedRecordStruct`` containers."""

    def _encode(self, obj: BsdRecord, context, path) -> dict:
        return dict(
            referent=obj.referent,
            canvas_res=obj.canvas_res,
            has_box=obj.box is not None,
            box=None if obj.box is None else list(obj.box.as_tuple()),
            bricks=[dict(foreground=b.polarity is Polarity.FG, length=b.length) for b in obj.bricks],
        )

    def _decode(self, obj, context, path) -> BsdRecord:
        box = BoxBins(*obj.box) if obj.has_box else None
        bricks = tuple(
            BrickToken(Polarity.FG if b.foreground else Polarity.BG, b.length) for b in obj.bricks
        )
        return BsdRecord(obj.referent, box, bricks, obj.canvas_res)


PackedRecords = PrefixedArray(Int32ub, PackedRecordAdapter(PackedRecordStruct))


# ============================================================================
# Public API
# ============================================================================

def serialize_bsd(records: Sequence[BsdRecord], use_bricks: bool = True) -> str:
    """
    Concatenate records as B-SD text.

    Examples:
        >>> box = BoxBins(0, 0, 0, 0)
        >>> serialize_bsd([BsdRecord("black dog", box, bricks_from_bits([1]))])
        '<ref>black dog</ref><box>[[0 0 0 0]]</box><seg>fg1</seg>'
    """
    return BsdPayload(use_bricks=use_bricks).build(list(records)).decode("utf-8")


def parse_bsd(text: str, mode: Union[ParseMode, str] = ParseMode.STRICT,
              canvas_res: int = DEFAULT_CANVAS) -> ParsedBsd:
    """
    Parse B-SD record text (brick or R-RLE ``seg`` payloads).

    Strict mode raises ``GrammarError`` on any grammar violation, including
    brick sums that do not match the box area. Lenient mode pads short brick
    sequences with background, truncates long ones, skips unknown tokens,
    swaps or clamps bad boxes and records a diagnostic for every repair.
    """
    lenient = ParseMode(mode) is ParseMode.LENIENT
    return BsdPayload(canvas_res, lenient=lenient).parse(text.encode("utf-8"))


class Rasterized(NamedTuple):
    instances: List[BinaryGrid]
    merged: LabelGrid


def rasterize(records: Sequence[BsdRecord], canvas_res: int = DEFAULT_CANVAS) -> Rasterized:
    """
    Draw records onto ``canvas_res x canvas_res`` canvases.

    Returns one binary canvas per record plus a merged label grid where
    record ``i`` owns label id ``i + 1`` and later records paint over
    earlier ones.
    """
    table = LabelTable.for_referents([r.referent for r in records])
    merged = np.zeros((canvas_res, canvas_res), dtype=np.int64)
    instances = []
    for i, record in enumerate(records):
        canvas = np.zeros((canvas_res, canvas_res), dtype=np.uint8)
        if record.box is not None:
            box = record.box
            if not box.fits(canvas_res):
                raise ValueError(f"Box {box.as_tuple()} exceeds the {canvas_res}x{canvas_res} canvas")
            canvas[box.y1:box.y2 + 1, box.x1:box.x2 + 1] = record.in_box_bits()
        merged[canvas == 1] = i + 1
        instances.append(BinaryGrid(canvas))
    return Rasterized(instances, LabelGrid(merged, table))


def pack_records(records: Sequence[BsdRecord]) -> bytes:
    return PackedRecords.build(list(records))


def unpack_records(data: bytes) -> List[BsdRecord]:
    return list(PackedRecords.parse(data))
