"""
High-Level Text-Mask API.

This module fronts the codecs with one pair of functions keyed by a
``SampleFormat``:

Functions:
    encode_mask: Serialize a label mask as I-SD or B-SD text
    decode_text: Decode I-SD or B-SD text back into a label grid
"""

from enum import Enum
from typing import List, NamedTuple, Optional, Union

from .bsd_codec import DEFAULT_CANVAS, BsdRecord, encode_record, parse_bsd, rasterize, serialize_bsd
from .diagnostics import Diagnostic, ParseMode
from .isd_codec import DescriptorKind, decode, encode
from .labels import BACKGROUND_ID, LabelTable
from .raster import LabelGrid, LabelMask, binary_mask_grid, downsample_mask


class SampleFormat(str, Enum):
    ISD_FULL = "isd-full"
    ISD_IRLE = "isd-irle"
    ISD_RRLE = "isd-rrle"
    BSD = "bsd"
    BSD_NOBRICKS = "bsd-nobricks"

    @property
    def is_isd(self) -> bool:
        return self.value.startswith("isd-")

    @property
    def descriptor_kind(self) -> Optional[DescriptorKind]:
        return DescriptorKind(self.value[4:]) if self.is_isd else None

    @property
    def use_bricks(self) -> bool:
        return self is SampleFormat.BSD


class TaskFamily(str, Enum):
    SEMANTIC = "semantic"
    REFERRING = "referring"
    GENERALIZED_REFERRING = "generalized_referring"
    REASONING = "reasoning"


class DecodedText(NamedTuple):
    grid: LabelGrid
    diagnostics: List[Diagnostic]


def encode_mask(mask: LabelMask, fmt: Union[SampleFormat, str], resolution: int = 16) -> str:
    """
    Serialize a label mask.

    I-SD formats downsample the mask to ``resolution x resolution`` and
    encode the grid. B-SD formats draw each non-background label of the
    table as one instance on a ``resolution`` canvas, in id order; a label
    absent from the mask becomes a no-target record.

    Examples:
        >>> table = LabelTable.from_labels(["dog"])
        >>> encode_mask(LabelMask(np.zeros((4, 4), dtype=int), table), "isd-rrle", 2)
        'others*2\\nothers*2'
    """
    fmt = SampleFormat(fmt)
    if fmt.is_isd:
        grid = downsample_mask(mask, resolution, resolution)
        return encode(grid, fmt.descriptor_kind).payload
    return serialize_bsd(encode_records(mask, resolution), use_bricks=fmt.use_bricks)


def encode_records(mask: LabelMask, canvas_res: int = DEFAULT_CANVAS) -> List[BsdRecord]:
    """One B-SD record per non-background label of the mask's table, in id order."""
    return [
        encode_record(binary_mask_grid(mask.data == label_id, canvas_res, canvas_res), label)
        for label_id, label in mask.table.entries
        if label_id != BACKGROUND_ID
    ]


def decode_text(text: str, fmt: Union[SampleFormat, str], resolution: int,
                table: Optional[LabelTable] = None,
                mode: Union[ParseMode, str] = ParseMode.STRICT) -> DecodedText:
    """
    Decode a bare payload (no template prose).

    I-SD payloads need ``table``. B-SD records are rasterized onto a
    ``resolution`` canvas and merged in paint order; the merged grid's table
    is built from the record referents.
    """
    fmt = SampleFormat(fmt)
    if fmt.is_isd:
        if table is None:
            raise ValueError("Decoding I-SD text requires a label table")
        grid, diagnostics = decode(text, fmt.descriptor_kind, resolution, resolution, table, mode)
        return DecodedText(grid, diagnostics)

    records, diagnostics = parse_bsd(text, mode, canvas_res=resolution)
    return DecodedText(rasterize(records, resolution).merged, diagnostics)
