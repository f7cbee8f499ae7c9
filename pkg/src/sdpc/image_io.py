"""Grayscale image container, PGM/raw file I/O and block partitioning."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Base class for image parsing failures."""


class UnsupportedFormatError(ImageFormatError):
    pass


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class ScanOrder(enum.IntEnum):
    RASTER = 0  # left to right, then top to bottom
    COLUMN_MAJOR = 1  # top to bottom, then left to right


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit grayscale image; ``pixels`` is a read-only (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("samples must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def samples(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self):
        return f"Image(width={self.width}, height={self.height})"


@dataclass(frozen=True)
class BlockLattice:
    block_size: int
    blocks_x: int
    blocks_y: int
    scan_order: ScanOrder = ScanOrder.RASTER

    @classmethod
    def for_size(cls, width: int, height: int, block_size: int, scan_order=ScanOrder.RASTER) -> "BlockLattice":
        if block_size < 2:
            raise ValueError(f"block size must be >= 2, got {block_size}")
        return cls(
            block_size,
            -(-width // block_size),
            -(-height // block_size),
            ScanOrder(scan_order),
        )

    @property
    def n(self) -> int:
        return self.blocks_x * self.blocks_y

    @property
    def padded_width(self) -> int:
        return self.blocks_x * self.block_size

    @property
    def padded_height(self) -> int:
        return self.blocks_y * self.block_size

    def position(self, index: int) -> tuple[int, int]:
        """(row, col) of the block emitted at scan position ``index``."""
        if self.scan_order == ScanOrder.RASTER:
            return divmod(index, self.blocks_x)
        col, row = divmod(index, self.blocks_y)
        return row, col

    def index(self, row: int, col: int) -> int:
        if self.scan_order == ScanOrder.RASTER:
            return row * self.blocks_x + col
        return col * self.blocks_y + row

    def positions(self) -> list[tuple[int, int]]:
        return [self.position(i) for i in range(self.n)]


def load_pgm(data: bytes) -> Image:
    """Parse a binary (P5, maxval 255) PGM file."""
    if data[:2] != b"P5":
        raise UnsupportedFormatError(f"unsupported image magic {data[:2]!r}; only binary PGM (P5) is accepted")
    # magic, width, height, maxval; '#' comments allowed between tokens
    pos = 2
    fields = []
    token = re.compile(rb"(?:\s+|#[^\n]*\n?)*(\S+)")
    for _ in range(3):
        m = token.match(data, pos)
        if m is None:
            raise MalformedHeaderError("PGM header ended early")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise MalformedHeaderError(f"bad PGM header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (need 255)")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("missing whitespace after PGM maxval")
    payload = data[pos + 1 :]
    count = width * height
    if len(payload) < count:
        raise TruncatedPayloadError(f"PGM payload has {len(payload)} bytes, header declares {count}")
    px = np.frombuffer(payload, dtype=np.uint8, count=count).reshape(height, width)
    return Image(px)


def dump_pgm(img: Image) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.samples


def load_raw(data: bytes, width: int, height: int) -> Image:
    """Headerless 8-bit row-major samples."""
    count = width * height
    if len(data) < count:
        raise TruncatedPayloadError(f"raw file has {len(data)} bytes, expected {count}")
    if len(data) > count:
        raise ImageFormatError(f"raw file has {len(data)} bytes, expected {count}")
    return Image(np.frombuffer(data, dtype=np.uint8).reshape(height, width))


def pad_to_lattice(pixels: np.ndarray, lattice: BlockLattice) -> np.ndarray:
    """Edge-replicate ``pixels`` up to the lattice's padded size."""
    h, w = pixels.shape
    return np.pad(
        pixels,
        ((0, lattice.padded_height - h), (0, lattice.padded_width - w)),
        mode="edge",
    )


def blocks_from_array(arr: np.ndarray, lattice: BlockLattice) -> np.ndarray:
    """Split a padded 2-D array into an (n, B*B) array of row-major block vectors in scan order."""
    b = lattice.block_size
    grid = arr.reshape(lattice.blocks_y, b, lattice.blocks_x, b).transpose(0, 2, 1, 3)
    if lattice.scan_order == ScanOrder.COLUMN_MAJOR:
        grid = grid.transpose(1, 0, 2, 3)
    return grid.reshape(lattice.n, b * b)


def array_from_blocks(blocks: np.ndarray, lattice: BlockLattice) -> np.ndarray:
    b = lattice.block_size
    blocks = np.asarray(blocks)
    if blocks.shape != (lattice.n, b * b):
        raise ValueError(f"expected {lattice.n} blocks of length {b * b}, got array of shape {blocks.shape}")
    if lattice.scan_order == ScanOrder.COLUMN_MAJOR:
        grid = blocks.reshape(lattice.blocks_x, lattice.blocks_y, b, b).transpose(1, 0, 2, 3)
    else:
        grid = blocks.reshape(lattice.blocks_y, lattice.blocks_x, b, b)
    return grid.transpose(0, 2, 1, 3).reshape(lattice.padded_height, lattice.padded_width)


def to_blocks(img: Image, block_size: int, order: ScanOrder = ScanOrder.RASTER) -> tuple[np.ndarray, BlockLattice]:
    """Partition ``img`` into non-overlapping block vectors.

    Returns the (n, B*B) float64 block array and the lattice describing it.
    Images whose sides are not multiples of ``block_size`` are padded by
    repeating the last row/column.
    """
    lattice = BlockLattice.for_size(img.width, img.height, block_size, order)
    padded = pad_to_lattice(img.pixels, lattice).astype(np.float64)
    return blocks_from_array(padded, lattice), lattice


def to_pixels(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to the 8-bit range."""
    values = np.asarray(values, dtype=np.float64)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def from_blocks(blocks, lattice: BlockLattice, original_w: int, original_h: int) -> Image:
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[0] != lattice.n:
        raise ValueError(f"block count mismatch: lattice has {lattice.n} blocks, got {blocks.shape[0] if blocks.ndim else 0}")
    arr = array_from_blocks(blocks, lattice)
    return Image(to_pixels(arr[:original_h, :original_w]))
