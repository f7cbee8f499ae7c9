"""Seeded orthonormal Gaussian block sensing matrix and per-block measurement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .image_io import BlockLattice

# Bumped whenever the draw or orthonormalization below changes; stored in stream headers.
GENERATOR_VERSION = 1
MAX_RETRIES = 8


class SensingError(ValueError):
    pass


def measurements_per_block(block_size: int, subrate: float) -> int:
    """M_B = round(S * B^2), ties rounded up."""
    if not (0.0 < subrate <= 1.0):
        raise SensingError(f"subrate must lie in (0, 1], got {subrate}")
    m = math.floor(subrate * block_size * block_size + 0.5)
    if m < 1:
        raise SensingError(f"subrate {subrate} gives no measurements for block size {block_size}")
    return m


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    matrix: np.ndarray  # (M_B, B*B), orthonormal rows
    block_size: int
    seed: int
    generator_version: int = GENERATOR_VERSION

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def subrate(self) -> float:
        return self.rows / self.cols


def _draw(rows: int, cols: int, seed: int) -> np.ndarray | None:
    rng = np.random.Generator(np.random.PCG64(seed))
    gauss = rng.standard_normal((rows, cols))
    # QR of the transpose orthonormalizes the rows in order (Gram-Schmidt equivalent)
    q, r = np.linalg.qr(gauss.T)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        return None
    phi = q.T
    # unique sign: first nonzero entry of each row positive
    first = phi[np.arange(rows), np.argmax(np.abs(phi) > 0, axis=1)]
    phi = phi * np.where(first < 0, -1.0, 1.0)[:, None]
    return np.ascontiguousarray(phi)


def generate_matrix(block_size: int, subrate: float, seed: int, generator_version: int = GENERATOR_VERSION) -> SensingMatrix:
    """Draw Phi_B for B x B blocks at the given subrate.

    Entries come from PCG64(seed) standard normals, then the rows are
    orthonormalized. A rank-deficient draw is retried with seed + 1, up to
    ``MAX_RETRIES`` times.
    """
    if generator_version != GENERATOR_VERSION:
        raise SensingError(f"unknown generator version {generator_version}")
    if block_size < 2:
        raise SensingError(f"block size must be >= 2, got {block_size}")
    rows = measurements_per_block(block_size, subrate)
    cols = block_size * block_size
    for attempt in range(MAX_RETRIES + 1):
        phi = _draw(rows, cols, seed + attempt)
        if phi is not None:
            phi.setflags(write=False)
            return SensingMatrix(phi, block_size, seed)
    raise SensingError(f"degenerate sensing matrix draw for seeds {seed}..{seed + MAX_RETRIES}")


def measure(matrix: SensingMatrix, block) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (matrix.cols,):
        raise SensingError(f"block length {block.shape} does not match matrix with {matrix.cols} columns")
    return matrix.matrix @ block


@dataclass(eq=False)
class MeasurementGrid:
    """Per-block measurements x and their causal reconstructions x~, both (n, M_B) arrays.

    ``reconstructed`` starts as NaN and is filled block by block during coding.
    """

    lattice: BlockLattice
    vectors: np.ndarray
    reconstructed: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.lattice.n:
            raise SensingError(f"expected {self.lattice.n} measurement vectors, got shape {self.vectors.shape}")
        if self.reconstructed is None:
            self.reconstructed = np.full(self.vectors.shape, np.nan)

    @property
    def m(self) -> int:
        return self.vectors.shape[1]


def measure_blocks(matrix: SensingMatrix, blocks: np.ndarray) -> np.ndarray:
    """Apply Phi_B to every row of an (n, B*B) block array."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[1] != matrix.cols:
        raise SensingError(f"blocks of shape {blocks.shape} do not match matrix with {matrix.cols} columns")
    return blocks @ matrix.matrix.T


def measure_image(matrix: SensingMatrix, blocks: np.ndarray, lattice: BlockLattice) -> MeasurementGrid:
    if lattice.block_size != matrix.block_size:
        raise SensingError(f"lattice block size {lattice.block_size} != matrix block size {matrix.block_size}")
    return MeasurementGrid(lattice, measure_blocks(matrix, blocks))


def back_project(matrix: SensingMatrix, vectors: np.ndarray) -> np.ndarray:
    """Phi_B^T applied to every row of an (n, M_B) array."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != matrix.rows:
        raise SensingError(f"vectors of shape {vectors.shape} do not match matrix with {matrix.rows} rows")
    return vectors @ matrix.matrix
