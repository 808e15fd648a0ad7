"""
Text-as-Mask: Segmentation Masks as Descriptor Text.

Serializes segmentation masks as plain text that a language model can read
and emit, and turns model output back into masks.

Key Features:
    - Image-wise descriptors (I-SD): one label per grid cell, written in full,
      as one run sequence (I-RLE) or as per-row runs (R-RLE)
    - Box-wise descriptors (B-SD): ``<ref>referent</ref><box>[[x1 y1 x2 y2]]</box><seg>bricks</seg>``
      with 126 semantic bricks (fg1..fg63, bg1..bg63)
    - Strict and lenient parsing with rule-tagged diagnostics
    - Instruction dataset building, segmentation metrics and token statistics
    - Wire formats defined with Construct (text payloads, PGM, packed records)

Public API:
    - encode_mask / decode_text: Mask <-> text for any ``SampleFormat``
    - parse_response: Extract a mask from free-form model output
    - build_corpus: Annotation JSONL -> instruction JSONL
    - evaluate: cIoU, gIoU, mIoU and Acc@0.5
    - compare_encodings / count_corpus: Token lengths per encoding

Usage:
    >>> from textmask import LabelGrid, LabelTable, encode, decode
    >>> table = LabelTable.from_labels(["dog"])
    >>> grid = LabelGrid.from_labels([["others", "dog"], ["dog", "dog"]], table)
    >>> encode(grid, "rrle").payload
    'others|dog\\ndog*2'
    >>> decode('others|dog\\ndog*2', "rrle", 2, 2, table).grid == grid
    True
"""

from .api import (
    DecodedText,
    SampleFormat,
    TaskFamily,
    decode_text,
    encode_mask,
    encode_records,
)

from .diagnostics import (
    Diagnostic,
    DiagnosticSink,
    EncodingError,
    GrammarError,
    LabelError,
    MaskFormatError,
    ParseMode,
    Severity,
)

from .labels import (
    BACKGROUND_ID,
    BACKGROUND_LABEL,
    BINARY_TABLE,
    LabelTable,
)

from .raster import (
    BinaryGrid,
    BoxBins,
    LabelGrid,
    LabelMask,
    PixelBox,
    binarize,
    binary_mask_grid,
    crop,
    downsample_mask,
    quantize_box,
    tight_box,
    upsample_grid,
)

from .raster_io import (
    load_binary_mask,
    load_mask,
    read_label_map,
    render_grid,
    write_label_map,
)

from .isd_codec import (
    DescriptorKind,
    DescriptorText,
    IsdPayload,
    decode,
    decode_descriptor,
    encode,
    encode_full,
    encode_irle,
    encode_rrle,
)

from .bsd_codec import (
    BRICK_VOCABULARY,
    BsdPayload,
    BsdRecord,
    BrickToken,
    Polarity,
    bits_from_bricks,
    bricks_from_bits,
    encode_record,
    is_canonical,
    pack_records,
    parse_bsd,
    rasterize,
    serialize_bsd,
    unpack_records,
)

from .response_grammar import (
    BsdExpectation,
    IsdExpectation,
    ParsedResponse,
    parse_response,
    validate_corpus,
)

from .config import (
    CliConfig,
    ConfigError,
    TemplateSet,
    TokenizerSpec,
    load_config,
)

from .dataset_builder import (
    Annotation,
    InstructionSample,
    build_bsd_sample,
    build_corpus,
    build_isd_sample,
)

from .metrics import (
    EvalPair,
    EvalReport,
    acc_at_05,
    box_iou,
    ciou,
    evaluate,
    giou,
    iou,
    miou,
    semantic_miou,
)

from .token_stats import (
    ReferenceTokenizer,
    VocabTokenizer,
    compare_encodings,
    count_corpus,
    ref_tokenize,
    resolution_sweep,
)

__version__ = "0.1.0"

__all__ = [
    # High-level API
    "DecodedText", "SampleFormat", "TaskFamily",
    "decode_text", "encode_mask", "encode_records",
    # Diagnostics
    "Diagnostic", "DiagnosticSink", "EncodingError", "GrammarError",
    "LabelError", "MaskFormatError", "ParseMode", "Severity",
    # Labels and rasters
    "BACKGROUND_ID", "BACKGROUND_LABEL", "BINARY_TABLE", "LabelTable",
    "BinaryGrid", "BoxBins", "LabelGrid", "LabelMask", "PixelBox",
    "binarize", "binary_mask_grid", "crop", "downsample_mask",
    "quantize_box", "tight_box", "upsample_grid",
    "load_binary_mask", "load_mask", "read_label_map", "render_grid", "write_label_map",
    # I-SD
    "DescriptorKind", "DescriptorText", "IsdPayload",
    "decode", "decode_descriptor", "encode",
    "encode_full", "encode_irle", "encode_rrle",
    # B-SD
    "BRICK_VOCABULARY", "BsdPayload", "BsdRecord", "BrickToken", "Polarity",
    "bits_from_bricks", "bricks_from_bits", "encode_record", "is_canonical",
    "pack_records", "parse_bsd", "rasterize", "serialize_bsd", "unpack_records",
    # Responses
    "BsdExpectation", "IsdExpectation", "ParsedResponse",
    "parse_response", "validate_corpus",
    # Configuration
    "CliConfig", "ConfigError", "TemplateSet", "TokenizerSpec", "load_config",
    # Datasets
    "Annotation", "InstructionSample",
    "build_bsd_sample", "build_corpus", "build_isd_sample",
    # Metrics
    "EvalPair", "EvalReport", "acc_at_05", "box_iou",
    "ciou", "evaluate", "giou", "iou", "miou", "semantic_miou",
    # Token statistics
    "ReferenceTokenizer", "VocabTokenizer",
    "compare_encodings", "count_corpus", "ref_tokenize", "resolution_sweep",
]
