"""Pytest configuration and shared generators for textmask tests."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path for development installs
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from textmask import LabelGrid, LabelTable  # noqa: E402


def random_grid(rng: np.random.Generator, rows: int, cols: int, n_labels: int = 4) -> LabelGrid:
    """Grid of random ids 0..n_labels-1 over a table ``l1 .. l{n-1}``."""
    table = LabelTable.from_labels([f"l{i}" for i in range(1, n_labels)])
    return LabelGrid(rng.integers(0, n_labels, size=(rows, cols)), table)


def blob_bits(rng: np.random.Generator, size: int = 64, rmin: int = 3, rmax: int = 14) -> np.ndarray:
    """One filled ellipse on a ``size x size`` canvas, fully inside it."""
    ry, rx = (int(v) for v in rng.integers(rmin, rmax + 1, size=2))
    cy = int(rng.integers(ry, size - ry))
    cx = int(rng.integers(rx, size - rx))
    yy, xx = np.ogrid[:size, :size]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240521)


@pytest.fixture
def make_grid():
    return random_grid


@pytest.fixture
def make_blob():
    return blob_bits
