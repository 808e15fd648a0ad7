"""
Unit tests for the image-wise descriptor codec (FULL, IRLE, RRLE).
"""

import numpy as np
import pytest

from textmask import (
    DescriptorKind, EncodingError, GrammarError, IsdPayload, LabelGrid, LabelTable,
    ParseMode, decode, decode_descriptor, encode, encode_full, encode_irle, encode_rrle,
)
from textmask.isd_codec import DescriptorText, detect_kind, find_runs


AB = LabelTable.from_labels(["a", "b"])
SKY = LabelTable.from_labels(["sky", "sand"])


def grid_of(rows, table=AB):
    return LabelGrid.from_labels(rows, table)


# ============================================================================
# FULL
# ============================================================================

def test_full_single_row():
    """One descriptor per cell, '|' between cells."""
    assert encode_full(grid_of([["sky", "sky", "sand"]], SKY)).payload == "sky|sky|sand"


def test_full_16x16_has_256_descriptors():
    """A 16x16 grid is written as 256 descriptors."""
    desc = encode_full(LabelGrid.filled(16, 16, SKY, 1))

    assert desc.descriptor_count == 256
    assert desc.payload.count("|") + desc.payload.count("\n") == 255


def test_full_rejects_unknown_id():
    """Encoding a grid whose id has no text names the id."""
    grid = LabelGrid(np.array([[0, 1]]), AB)
    trimmed = LabelTable.from_labels([])
    # bypass the grid check to simulate a table that lost an entry
    object.__setattr__(grid, "table", trimmed)

    with pytest.raises(EncodingError, match="id 1"):
        encode_full(grid)


# ============================================================================
# IRLE
# ============================================================================

def test_irle_constant_grid():
    """A constant 16x16 grid is one run."""
    assert encode_irle(LabelGrid.filled(16, 16, AB)).payload == "others*256"


def test_irle_run_crosses_rows():
    """[[a, a], [a, b]] -> 'a*3|b'."""
    assert encode_irle(grid_of([["a", "a"], ["a", "b"]])).payload == "a*3|b"


def test_irle_runs_are_maximal(rng, make_grid):
    """No two adjacent IRLE runs share a label."""
    for _ in range(100):
        desc = encode_irle(make_grid(rng, 6, 6, 3))
        labels = [label for label, _ in desc.runs()[0]]
        assert all(x != y for x, y in zip(labels, labels[1:]))


# ============================================================================
# RRLE
# ============================================================================

def test_rrle_constant_grid():
    """16 lines, each 'label*16'."""
    payload = encode_rrle(LabelGrid.filled(16, 16, AB, 2)).payload

    assert payload.split("\n") == ["b*16"] * 16


def test_rrle_rows_encoded_independently():
    """[[a, a], [a, b]] -> 'a*2\\na|b'."""
    assert encode_rrle(grid_of([["a", "a"], ["a", "b"]])).payload == "a*2\na|b"


def test_find_runs_with_row_boundaries():
    """row_length forces a run break at every row start."""
    runs = find_runs(np.array([1, 1, 1, 1]), row_length=2)

    assert [(r.label_id, r.count) for r in runs] == [(1, 2), (1, 2)]


# ============================================================================
# Round Trips
# ============================================================================

@pytest.mark.parametrize("size", [4, 16, 32, 64])
def test_random_grids_roundtrip(rng, make_grid, size):
    """Strict decode(encode(g)) == g for 1,000 random grids in every kind."""
    for _ in range(1000):
        grid = make_grid(rng, size, size, int(rng.integers(1, 6)))
        for kind in DescriptorKind:
            decoded, diagnostics = decode_descriptor(encode(grid, kind), grid.table)
            assert decoded == grid
            assert diagnostics == []


def test_payload_lengths_ordered(rng, make_grid):
    """Character length: IRLE <= RRLE <= FULL for every grid."""
    for _ in range(300):
        size = int(rng.integers(1, 17))
        if rng.random() < 0.5:
            grid = make_grid(rng, size, size, int(rng.integers(1, 5)))
        else:
            blocks = rng.integers(0, 3, size=(size, 2))
            grid = LabelGrid(np.repeat(blocks, 4, axis=1), AB)
        lengths = {kind: len(encode(grid, kind).payload) for kind in DescriptorKind}
        assert lengths[DescriptorKind.IRLE] <= lengths[DescriptorKind.RRLE] <= lengths[DescriptorKind.FULL]


@pytest.mark.parametrize("kind", list(DescriptorKind))
def test_blocky_grids_roundtrip(rng, kind):
    """Coherent regions (long runs) round-trip too."""
    table = LabelTable.from_labels(["road", "car", "tree"])
    for _ in range(50):
        cells = np.repeat(np.repeat(rng.integers(0, 4, size=(4, 4)), 4, axis=0), 4, axis=1)
        grid = LabelGrid(cells, table)
        assert decode_descriptor(encode(grid, kind), table).grid == grid


def test_non_square_grid_roundtrip(rng, make_grid):
    """Rows and cols may differ."""
    grid = make_grid(rng, 3, 11)

    for kind in DescriptorKind:
        assert decode_descriptor(encode(grid, kind), grid.table).grid == grid


def test_construct_adapter_build_and_parse():
    """IsdPayload is a symmetric construct."""
    codec = IsdPayload(DescriptorKind.RRLE, 2, 2, AB)
    grid = grid_of([["a", "a"], ["a", "b"]])

    data = codec.build(grid)

    assert data == b"a*2\na|b"
    assert codec.parse(data).grid == grid


def test_construct_adapter_rejects_wrong_shape():
    """Building checks the grid shape."""
    codec = IsdPayload(DescriptorKind.FULL, 3, 3, AB)

    with pytest.raises(EncodingError):
        codec.build(grid_of([["a"]]))


# ============================================================================
# Strict Decoding
# ============================================================================

def test_decode_irle_example():
    """'a*3|b' as IRLE at 2x2."""
    grid, _ = decode("a*3|b", "irle", 2, 2, AB)

    assert grid.to_labels() == [["a", "a"], ["a", "b"]]


@pytest.mark.parametrize("payload, kind, rule", [
    ("a|c\na|b", "rrle", "unknown-label"),
    ("a*x\na|b", "rrle", "malformed-run"),
    ("a*0\na|b", "rrle", "malformed-run"),
    ("a||b", "irle", "empty-descriptor"),
    ("a*2\na|b", "full", "run-in-full"),
    ("a*2", "rrle", "row-count"),
    ("a*2\na|b\nb*2", "rrle", "row-count"),
    ("a*3\na|b", "rrle", "cell-overflow"),
    ("a\na|b", "rrle", "cell-shortfall"),
    ("a*2\na|b", "irle", "newline-in-irle"),
    ("a*5", "irle", "cell-overflow"),
])
def test_strict_decode_rules(payload, kind, rule):
    """Each malformation raises GrammarError naming its rule."""
    with pytest.raises(GrammarError) as excinfo:
        decode(payload, kind, 2, 2, AB)

    assert excinfo.value.rule == rule


def test_strict_error_offset_points_at_item():
    """Offsets are byte positions in the payload."""
    with pytest.raises(GrammarError) as excinfo:
        decode("a*2\na|zz", "rrle", 2, 2, AB)

    assert excinfo.value.offset == 6


# ============================================================================
# Lenient Decoding
# ============================================================================

def test_lenient_truncates_overflow():
    """'a*5' at 2x2 -> all a, plus one truncation diagnostic."""
    grid, diagnostics = decode("a*5", "irle", 2, 2, AB, ParseMode.LENIENT)

    assert grid.to_labels() == [["a", "a"], ["a", "a"]]
    assert [d.rule for d in diagnostics] == ["cell-overflow"]


def test_lenient_pads_and_maps_unknown_labels():
    """Unknown labels become background; short rows are padded."""
    grid, diagnostics = decode("zebra|b\na", "rrle", 2, 2, AB, "lenient")

    assert grid.to_labels() == [["others", "b"], ["a", "others"]]
    assert [d.rule for d in diagnostics] == ["unknown-label", "cell-shortfall"]


def test_lenient_missing_rows_filled_with_background():
    """Absent rows decode as background."""
    grid, diagnostics = decode("b*2", "rrle", 3, 2, AB, "lenient")

    assert grid.cells.tolist() == [[2, 2], [0, 0], [0, 0]]
    assert diagnostics[0].rule == "row-count"


def test_lenient_huge_count_does_not_allocate():
    """A run count far beyond the grid is clipped, not expanded."""
    grid, diagnostics = decode("a*99999999999999", "irle", 2, 2, AB, "lenient")

    assert (grid.cells == 1).all()
    assert diagnostics[-1].rule == "cell-overflow"


def test_lenient_count_past_int_conversion_limit():
    """Counts with thousands of digits clip to the grid without converting."""
    grid, diagnostics = decode("a*" + "9" * 5000, "irle", 2, 2, AB, "lenient")

    assert (grid.cells == 1).all()
    assert [d.rule for d in diagnostics] == ["cell-overflow"]
    with pytest.raises(GrammarError) as excinfo:
        decode("a*" + "1" * 5000, "irle", 2, 2, AB)
    assert excinfo.value.rule == "cell-overflow"


def test_count_leading_zeros():
    """'a*0004' is a run of four; all-zero counts are malformed."""
    grid, diagnostics = decode("a*0004", "irle", 2, 2, AB)
    assert (grid.cells == 1).all() and diagnostics == []

    _, diagnostics = decode("a*" + "0" * 5000 + "|a*4", "irle", 2, 2, AB, "lenient")
    assert diagnostics[0].rule == "malformed-run"


def test_row_count_offset_points_past_payload():
    """Missing rows are reported at the end of the text."""
    _, diagnostics = decode("b*2", "rrle", 3, 2, AB, "lenient")

    assert diagnostics[0].offset == 3


def test_lenient_offsets_are_bytes_for_every_diagnostic():
    """Each diagnostic in a non-ASCII payload carries its UTF-8 byte offset."""
    table = LabelTable.from_labels(["café"])
    payload = "|".join(["café", "zz"] * 50)

    _, diagnostics = decode(payload, "irle", 10, 10, table, "lenient")

    starts = [i for i in range(len(payload)) if payload.startswith("zz", i)]
    assert [d.rule for d in diagnostics] == ["unknown-label"] * 50
    assert [d.offset for d in diagnostics] == [len(payload[:i].encode("utf-8")) for i in starts]


def test_descriptor_count_tolerates_malformed_runs():
    """Bad counts count as one cell; oversized counts stop just past capacity."""
    desc = DescriptorText(DescriptorKind.IRLE, "a*x|b*" + "9" * 5000, 2, 2)

    assert desc.runs() == [[("a", 1), ("b", 5)]]
    assert desc.descriptor_count == 6


def test_lenient_never_raises_on_garbage(rng):
    """Random byte soup always decodes to a grid of the expected shape."""
    alphabet = list("ab*|\n0123456789xz")
    for _ in range(300):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 40))))
        for kind in DescriptorKind:
            grid, _ = decode(text, kind, 3, 4, AB, "lenient")
            assert grid.cells.shape == (3, 4)


# ============================================================================
# Kind Detection
# ============================================================================

def test_detect_kind():
    """Single-line multi-row payloads are IRLE."""
    assert detect_kind("a*3|b", 2) is DescriptorKind.IRLE
    assert detect_kind("a*2\na|b", 2) is DescriptorKind.RRLE
    assert detect_kind("a|b", 1) is DescriptorKind.RRLE
