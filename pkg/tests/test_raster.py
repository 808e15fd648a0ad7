"""
Unit tests for raster containers, resampling and box helpers.
"""

import numpy as np
import pytest

from textmask import (
    BinaryGrid, BoxBins, LabelError, LabelGrid, LabelMask, LabelTable, PixelBox,
    binarize, binary_mask_grid, crop, downsample_mask, quantize_box, tight_box,
    upsample_grid,
)


TABLE = LabelTable.from_labels(["a", "b", "c", "d"])


# ============================================================================
# Containers
# ============================================================================

def test_mask_rejects_unknown_ids():
    """Every id in a mask must be named by its table."""
    with pytest.raises(LabelError):
        LabelMask(np.array([[0, 9]]), TABLE)


def test_grid_is_read_only():
    """Grids hold frozen arrays."""
    grid = LabelGrid(np.zeros((2, 2), dtype=int), TABLE)

    with pytest.raises(ValueError):
        grid.cells[0, 0] = 1


def test_grid_from_labels_and_back():
    """Label texts map to ids and back."""
    grid = LabelGrid.from_labels([["a", "b"], ["others", "a"]], TABLE)

    assert grid.cells.tolist() == [[1, 2], [0, 1]]
    assert grid.to_labels() == [["a", "b"], ["others", "a"]]


def test_binary_grid_rejects_other_values():
    """Binary grids take 0/1 only."""
    with pytest.raises(ValueError):
        BinaryGrid(np.array([[0, 2]]))


def test_box_rejects_reversed_corners():
    """x1 <= x2 and y1 <= y2."""
    with pytest.raises(ValueError):
        BoxBins(5, 3, 2, 9)


# ============================================================================
# Resampling
# ============================================================================

def test_downsample_uniform_mask():
    """A constant mask downsamples to a constant grid."""
    table = LabelTable.from_mapping({0: "others", 5: "road"})
    mask = LabelMask(np.full((37, 53), 5), table)

    grid = downsample_mask(mask, 16, 16)

    assert grid.cells.shape == (16, 16)
    assert (grid.cells == 5).all()


def test_downsample_majority_vote():
    """Three background pixels outvote one foreground pixel."""
    mask = LabelMask(np.array([[0, 0], [0, 1]]), TABLE)

    assert downsample_mask(mask, 1, 1).cells.tolist() == [[0]]


def test_downsample_tie_goes_to_smallest_id():
    """A 2-2 split resolves to the smaller id."""
    mask = LabelMask(np.array([[2, 1], [1, 2]]), TABLE)

    assert downsample_mask(mask, 1, 1).cells.tolist() == [[1]]


def test_downsample_halves():
    """Left half 1, right half 2 at 4x4 -> [[1, 2], [1, 2]]."""
    data = np.array([[1, 1, 2, 2]] * 4)

    grid = downsample_mask(LabelMask(data, TABLE), 2, 2)

    assert grid.cells.tolist() == [[1, 2], [1, 2]]


def test_downsample_matches_footprint_oracle(rng):
    """Each cell holds the majority id among pixels whose centers fall inside it."""
    data = rng.integers(0, 5, size=(12, 18))
    grid = downsample_mask(LabelMask(data, TABLE), 4, 6)

    for r in range(4):
        for c in range(6):
            block = data[r * 3:(r + 1) * 3, c * 3:(c + 1) * 3].ravel()
            counts = np.bincount(block, minlength=5)
            assert grid.cells[r, c] == int(np.argmax(counts))


def test_downsample_identity_at_native_size(rng):
    """Downsampling to the mask's own size changes nothing."""
    data = rng.integers(0, 5, size=(7, 9))

    assert np.array_equal(downsample_mask(LabelMask(data, TABLE), 7, 9).cells, data)


def test_downsample_ignores_order_within_footprint(rng):
    """Shuffling pixels inside a cell footprint leaves the grid unchanged."""
    for _ in range(50):
        data = rng.integers(0, 5, size=(12, 18))
        shuffled = data.copy()
        for r in range(4):
            for c in range(6):
                block = shuffled[r * 3:(r + 1) * 3, c * 3:(c + 1) * 3]
                block[...] = rng.permutation(block.ravel()).reshape(3, 3)

        before = downsample_mask(LabelMask(data, TABLE), 4, 6)
        after = downsample_mask(LabelMask(shuffled, TABLE), 4, 6)
        assert np.array_equal(before.cells, after.cells)


def test_upsample_single_cell():
    """A 1x1 grid fills the whole output."""
    table = LabelTable.from_mapping({0: "others", 7: "x"})
    mask = upsample_grid(LabelGrid(np.array([[7]]), table), 3, 3)

    assert (mask.data == 7).all()


def test_upsample_quadrants():
    """[[1, 2], [3, 4]] at 4x4 gives four 2x2 blocks."""
    grid = LabelGrid(np.array([[1, 2], [3, 4]]), TABLE)

    mask = upsample_grid(grid, 4, 4)

    assert mask.data.tolist() == [
        [1, 1, 2, 2],
        [1, 1, 2, 2],
        [3, 3, 4, 4],
        [3, 3, 4, 4],
    ]


def test_upsample_odd_size_nearest_cell():
    """At 3x3 each pixel takes the cell under its center."""
    grid = LabelGrid(np.array([[1, 2], [3, 4]]), TABLE)

    mask = upsample_grid(grid, 3, 3)

    for y in range(3):
        for x in range(3):
            r = int((y + 0.5) * 2 / 3)
            c = int((x + 0.5) * 2 / 3)
            assert mask.data[y, x] == grid.cells[r, c]


# ============================================================================
# Binary Views and Boxes
# ============================================================================

def test_binarize():
    """Bits mark cells holding the target id."""
    grid = LabelGrid(np.array([[1, 0], [0, 1]]), TABLE)

    assert binarize(grid, 1).bits.ravel().tolist() == [1, 0, 0, 1]
    assert binarize(grid, 2).is_empty()
    assert binarize(LabelGrid.filled(3, 3, TABLE, 1), 1).area == 9


def test_binarize_unknown_target():
    """The target must be a table id."""
    with pytest.raises(LabelError):
        binarize(LabelGrid.filled(2, 2, TABLE), 42)


def test_binary_mask_grid_majority():
    """Full-resolution bits are majority-voted onto the grid."""
    bits = np.zeros((8, 8), dtype=bool)
    bits[:4, :4] = True

    grid = binary_mask_grid(bits, 2, 2)

    assert grid.bits.tolist() == [[1, 0], [0, 0]]


def test_tight_box_point_and_full():
    """A point box and the full-canvas box."""
    g = np.zeros((8, 8), dtype=np.uint8)
    g[3, 5] = 1

    assert tight_box(BinaryGrid(g)) == BoxBins(5, 3, 5, 3)
    assert tight_box(BinaryGrid(np.ones((64, 64)))) == BoxBins(0, 0, 63, 63)
    assert tight_box(BinaryGrid.zeros(4, 4)) is None


def test_tight_box_matches_scan(rng):
    """Tight boxes agree with a min/max scan of the set bits."""
    for _ in range(50):
        bits = rng.random((16, 16)) < 0.05
        if not bits.any():
            continue
        ys, xs = np.nonzero(bits)
        box = tight_box(BinaryGrid(bits))
        assert box.as_tuple() == (xs.min(), ys.min(), xs.max(), ys.max())


def test_crop_returns_in_box_bits():
    """crop slices the inclusive box."""
    g = np.arange(16).reshape(4, 4) % 2

    sub = crop(BinaryGrid(g), BoxBins(1, 1, 2, 3))

    assert sub.shape == (3, 2)
    assert sub.tolist() == [[1, 0], [1, 0], [1, 0]]


def test_quantize_box():
    """floor(c * R / extent), clamped to the last bin."""
    assert quantize_box(PixelBox(400, 0, 799, 599), 800, 600) == BoxBins(32, 0, 63, 63)
    assert quantize_box(PixelBox(0, 0, 0, 0), 37, 11).as_tuple() == (0, 0, 0, 0)


def test_quantize_box_outside_image():
    """Pixel boxes must lie inside the image."""
    with pytest.raises(ValueError):
        quantize_box(PixelBox(0, 0, 800, 10), 800, 600)


@pytest.mark.parametrize("extent", [1, 37, 64, 800])
def test_quantize_box_monotone(extent):
    """Moving any corner right or down never moves its bin left or up."""
    left = [quantize_box(PixelBox(c, 0, c, 0), extent, 1).x1 for c in range(extent)]
    right = [quantize_box(PixelBox(0, 0, c, 0), extent, 1).x2 for c in range(extent)]
    top = [quantize_box(PixelBox(0, c, 0, c), 1, extent).y1 for c in range(extent)]
    bottom = [quantize_box(PixelBox(0, 0, 0, c), 1, extent).y2 for c in range(extent)]

    for bins in (left, right, top, bottom):
        assert bins == sorted(bins)
        assert 0 <= bins[0] and bins[-1] <= 63
