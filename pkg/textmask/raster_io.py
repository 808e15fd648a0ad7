"""
Label-Map File I/O.

Masks enter and leave the package as single-channel rasters whose pixel
value is the label id:

    - PGM (P5, binary): 8-bit when maxval <= 255, else 16-bit big-endian.
      Defined declaratively with Construct (``PGMRaster``).
    - PNG grayscale (L / I;16) or palette (P) images, read and written with
      Pillow.

``render_grid`` turns a grid into an RGB PNG with a fixed palette for visual
inspection.
"""

import colorsys
from pathlib import Path
from typing import Union

import numpy as np
from construct import Construct, Container, Const, Struct, Bytes, this, StreamError
from PIL import Image

from .labels import LabelTable
from .raster import LabelGrid, LabelMask, upsample_grid


PathLike = Union[str, Path]


# ============================================================================
# PGM Header Construct
# ============================================================================

_WHITESPACE = b" \t\r\n"


class PGMHeader(Construct):
    """
    ASCII header of a binary PGM file, following the ``P5`` magic.

    Format: whitespace, width, whitespace, height, whitespace, maxval, then
    exactly one whitespace byte before the raster. ``#`` comments run to the
    end of their line and may appear anywhere between fields.

    Parses to ``Container(width, height, maxval, sample_bytes)``.
    """

    def _read_token(self, stream, path) -> int:
        digits = b""
        while True:
            ch = stream.read(1)
            if not ch:
                if digits:
                    return int(digits)
                raise StreamError("PGM header truncated", path=path)
            if ch == b"#" and not digits:
                while ch not in (b"\n", b""):
                    ch = stream.read(1)
                continue
            if ch in _WHITESPACE:
                if digits:
                    return int(digits)
                continue
            if not ch.isdigit():
                raise StreamError(f"Unexpected byte {ch!r} in PGM header", path=path)
            digits += ch

    def _parse(self, stream, context, path) -> Container:
        width = self._read_token(stream, path)
        height = self._read_token(stream, path)
        # the whitespace ending maxval is the single separator before the raster
        maxval = self._read_token(stream, path)
        if width < 1 or height < 1 or not 0 < maxval < 65536:
            raise StreamError(f"Invalid PGM geometry {width}x{height} maxval={maxval}", path=path)
        return Container(width=width, height=height, maxval=maxval,
                         sample_bytes=2 if maxval > 255 else 1)

    def _build(self, obj, stream, context, path):
        stream.write(f"\n{obj['width']} {obj['height']}\n{obj['maxval']}\n".encode("ascii"))
        return obj

    def _sizeof(self, context, path):
        raise NotImplementedError("PGM header size is variable")


PGMRaster = Struct(
    "magic" / Const(b"P5"),
    "header" / PGMHeader(),
    "pixels" / Bytes(this.header.width * this.header.height * this.header.sample_bytes),
)
"""
Binary PGM file.

Example (2x1, 8-bit):
    P5\\n2 1\\n255\\n\\x00\\x07
"""


def _pgm_dtype(sample_bytes: int) -> str:
    return ">u2" if sample_bytes == 2 else "u1"


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode PGM bytes into an ``(height, width)`` id array."""
    parsed = PGMRaster.parse(data)
    header = parsed.header
    pixels = np.frombuffer(parsed.pixels, dtype=_pgm_dtype(header.sample_bytes))
    return pixels.reshape(header.height, header.width).astype(np.int64)


def build_pgm(ids: np.ndarray) -> bytes:
    """Encode an id array as PGM bytes (16-bit only when an id exceeds 255)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() > 65535):
        raise ValueError("PGM label ids must lie in [0, 65535]")
    maxval = 65535 if ids.size and ids.max() > 255 else 255
    sample_bytes = 2 if maxval > 255 else 1
    header = Container(width=ids.shape[1], height=ids.shape[0], maxval=maxval,
                       sample_bytes=sample_bytes)
    pixels = ids.astype(_pgm_dtype(sample_bytes)).tobytes()
    return PGMRaster.build(dict(header=header, pixels=pixels))


# ============================================================================
# File Level
# ============================================================================

def read_label_map(path: PathLike) -> np.ndarray:
    """Read a PGM or PNG label map into an ``(height, width)`` int64 array."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return parse_pgm(path.read_bytes())
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16", "I;16B", "1"):
            raise ValueError(f"{path}: expected a single-channel image, got mode {img.mode}")
        return np.asarray(img).astype(np.int64)


def write_label_map(path: PathLike, ids: np.ndarray) -> None:
    """Write an id array as PGM or PNG, chosen by file suffix."""
    path = Path(path)
    ids = np.asarray(ids)
    if path.suffix.lower() == ".pgm":
        path.write_bytes(build_pgm(ids))
        return
    if ids.size and (ids.min() < 0 or ids.max() > 65535):
        raise ValueError("PNG label ids must lie in [0, 65535]")
    if ids.size and ids.max() > 255:
        Image.fromarray(ids.astype(np.uint16)).save(path, format="PNG")
    else:
        Image.fromarray(ids.astype(np.uint8)).save(path, format="PNG")


def load_mask(path: PathLike, table: LabelTable) -> LabelMask:
    """Read a label map and bind it to ``table`` (every id must be known)."""
    return LabelMask(read_label_map(path), table)


def load_binary_mask(path: PathLike) -> np.ndarray:
    """Read an instance mask; any non-zero pixel is foreground."""
    return read_label_map(path) != 0


# ============================================================================
# Rendering
# ============================================================================

def palette_color(label_id: int) -> tuple:
    """Deterministic RGB color for a label id; id 0 is black."""
    if label_id == 0:
        return (0, 0, 0)
    hue = (label_id * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return (round(r * 255), round(g * 255), round(b * 255))


def render_grid(grid: LabelGrid, width: int, height: int) -> Image.Image:
    """Upsample ``grid`` to ``width x height`` and colorize it."""
    mask = upsample_grid(grid, width, height)
    ids = mask.data
    lut = np.array([palette_color(int(v)) for v in range(int(ids.max()) + 1)], dtype=np.uint8)
    return Image.fromarray(lut[ids])
