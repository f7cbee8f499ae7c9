"""The ``.sdpc`` file format and the entropy-based rate estimate.

Layout (all multi-byte header fields big-endian)::

    magic            4s   b"SDPC"
    format_version   u8
    generator_ver    u8   sensing-matrix generator version
    width, height    u32, u32
    block_size       u16
    m_b              u32  measurements per block
    q                f64  quantizer step
    seed             u64
    scan_order       u8
    mode_policy      u8
    payload          bit-packed, MSB first, zero-padded to a byte

Per block in scan order the payload holds a 2-bit mode flag (SDPC policy
only) followed by ``m_b`` signed order-0 Exp-Golomb codes.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

import numpy as np

from .image_io import ScanOrder
from .sensing import GENERATOR_VERSION

MAGIC = b"SDPC"
FORMAT_VERSION = 1
INDEX_LIMIT = 1 << 31
_HEADER = struct.Struct(">4sBBIIHIdQBB")
HEADER_SIZE = _HEADER.size


class ModePolicy(enum.IntEnum):
    SDPC = 0  # all four directional modes, 2-bit flag per block
    DPCM = 1  # previous block in the scan line
    NONE = 2  # zero prediction (SQ alone)

    @property
    def signals_modes(self) -> bool:
        return self is ModePolicy.SDPC


class BitstreamError(ValueError):
    pass


class BadMagicError(BitstreamError):
    pass


class VersionMismatchError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    def __init__(self, message, block_index=None):
        super().__init__(message)
        self.block_index = block_index


class TrailingDataError(BitstreamError):
    pass


class StreamFormatError(BitstreamError):
    pass


class IndexRangeError(BitstreamError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    block_size: int
    m_b: int
    q: float
    seed: int
    scan_order: ScanOrder = ScanOrder.RASTER
    mode_policy: ModePolicy = ModePolicy.SDPC
    format_version: int = FORMAT_VERSION
    generator_version: int = GENERATOR_VERSION

    @property
    def blocks_x(self) -> int:
        return -(-self.width // self.block_size)

    @property
    def blocks_y(self) -> int:
        return -(-self.height // self.block_size)

    @property
    def n_blocks(self) -> int:
        return self.blocks_x * self.blocks_y

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            self.format_version,
            self.generator_version,
            self.width,
            self.height,
            self.block_size,
            self.m_b,
            float(self.q),
            self.seed,
            int(self.scan_order),
            int(self.mode_policy),
        )

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if data[:4] != MAGIC:
            raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        if len(data) < HEADER_SIZE:
            raise TruncatedStreamError(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
        (_, fmt, gen, w, h, b, m, q, seed, scan, policy) = _HEADER.unpack_from(data)
        if fmt != FORMAT_VERSION:
            raise VersionMismatchError(f"unsupported format version {fmt} (this build reads {FORMAT_VERSION})")
        if gen != GENERATOR_VERSION:
            raise VersionMismatchError(f"unsupported generator version {gen} (this build has {GENERATOR_VERSION})")
        if w == 0 or h == 0 or b < 2 or not (1 <= m <= b * b):
            raise StreamFormatError(f"inconsistent geometry: {w}x{h}, B={b}, M_B={m}")
        if not (math.isfinite(q) and q > 0):
            raise StreamFormatError(f"bad quantizer step {q}")
        try:
            scan, policy = ScanOrder(scan), ModePolicy(policy)
        except ValueError as exc:
            raise StreamFormatError(str(exc)) from None
        return cls(w, h, b, m, q, seed, scan, policy, fmt, gen)


@dataclass(eq=False)
class EncodedStream:
    """Header plus per-block mode flags (None unless SDPC) and (n, M_B) int64 indices."""

    header: StreamHeader
    modes: np.ndarray | None
    indices: np.ndarray

    def to_bytes(self) -> bytes:
        return write_stream(self.header, self.modes, self.indices)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedStream":
        return cls(*read_stream(data))


def signed_to_code(s: int) -> int:
    return 2 * s - 1 if s > 0 else -2 * s


def code_to_signed(v: int) -> int:
    return (v + 1) // 2 if v & 1 else -(v // 2)


def exp_golomb(v: int) -> str:
    """Order-0 Exp-Golomb codeword of ``v >= 0`` as a '0'/'1' string."""
    bits = format(v + 1, "b")
    return "0" * (len(bits) - 1) + bits


def _pack_bits(bitstr: str) -> bytes:
    if not bitstr:
        return b""
    arr = np.frombuffer(bitstr.encode("ascii"), dtype=np.uint8) - ord("0")
    return np.packbits(arr).tobytes()


def _index_codes(indices: np.ndarray) -> list[str]:
    flat = np.asarray(indices, dtype=np.int64).ravel()
    if flat.size and int(np.abs(flat).max()) >= INDEX_LIMIT:
        raise IndexRangeError(f"quantizer index magnitude {int(np.abs(flat).max())} exceeds 2^31 - 1")
    mapped = np.where(flat > 0, 2 * flat - 1, -2 * flat)
    cache: dict[int, str] = {}
    out = []
    for v in mapped.tolist():
        code = cache.get(v)
        if code is None:
            code = cache[v] = exp_golomb(v)
        out.append(code)
    return out


def pack_indices(indices) -> bytes:
    """Exp-Golomb-pack indices alone, without header or mode flags."""
    return _pack_bits("".join(_index_codes(indices)))


def write_stream(header: StreamHeader, modes, indices) -> bytes:
    indices = np.asarray(indices, dtype=np.int64)
    n, m = header.n_blocks, header.m_b
    if indices.shape != (n, m):
        raise StreamFormatError(f"indices shape {indices.shape} does not match header ({n}, {m})")
    codes = _index_codes(indices)
    if header.mode_policy.signals_modes:
        if modes is None or len(modes) != n:
            raise StreamFormatError("SDPC policy needs one mode flag per block")
        flags = [format(int(f), "02b") for f in modes]
        if any(len(f) != 2 or f[0] == "-" for f in flags):
            raise StreamFormatError("mode flags must lie in 0..3")
        parts = []
        for i in range(n):
            parts.append(flags[i])
            parts.extend(codes[i * m : (i + 1) * m])
        bitstr = "".join(parts)
    else:
        if modes is not None:
            raise StreamFormatError(f"policy {header.mode_policy.name} carries no mode flags")
        bitstr = "".join(codes)
    return header.pack() + _pack_bits(bitstr)


def read_stream(data: bytes) -> tuple[StreamHeader, np.ndarray | None, np.ndarray]:
    header = StreamHeader.unpack(data)
    payload = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE)
    bits = (np.unpackbits(payload) + ord("0")).tobytes().decode("ascii")
    total = len(bits)
    n, m = header.n_blocks, header.m_b
    signaled = header.mode_policy.signals_modes
    modes = np.zeros(n, dtype=np.int8) if signaled else None
    out = np.empty(n * m, dtype=np.int64)
    pos = 0
    k = 0
    for block in range(n):
        if signaled:
            if pos + 2 > total:
                raise TruncatedStreamError(f"stream truncated in mode flag of block {block}", block)
            modes[block] = int(bits[pos : pos + 2], 2)
            pos += 2
        for _ in range(m):
            one = bits.find("1", pos)
            if one < 0:
                raise TruncatedStreamError(f"stream truncated inside block {block}", block)
            zeros = one - pos
            if zeros > 31:
                raise StreamFormatError(f"codeword with {zeros} leading zeros in block {block} exceeds index cap")
            end = one + zeros + 1
            if end > total:
                raise TruncatedStreamError(f"stream truncated inside block {block}", block)
            out[k] = code_to_signed(int(bits[one:end], 2) - 1)
            k += 1
            pos = end
    rest = total - pos
    if rest >= 8:
        raise TrailingDataError(f"{rest // 8} unexpected bytes after the last block")
    if "1" in bits[pos:]:
        raise TrailingDataError("nonzero padding bits after the last block")
    return header, modes, out.reshape(n, m)


@dataclass(frozen=True)
class RateEstimate:
    entropy_bits_per_index: float
    index_bits: float
    mode_overhead_bpp: float
    total_bpp: float

    @property
    def index_bpp(self) -> float:
        return self.total_bpp - self.mode_overhead_bpp


def entropy_bits(values) -> float:
    """Empirical Shannon entropy (bits/symbol) of the pooled histogram of ``values``."""
    values = np.asarray(values).ravel()
    if values.size == 0:
        raise ValueError("entropy of an empty index set is undefined")
    _, counts = np.unique(values, return_counts=True)
    p = counts / values.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def estimate_rate(all_indices, block_size: int, m_b: int, image_pixels: int, modes_signaled: bool) -> RateEstimate:
    """Bitrate as the pooled index entropy plus 2 bits per block for mode flags."""
    flat = np.asarray(all_indices).ravel()
    if flat.size == 0:
        raise ValueError("no quantizer indices to estimate a rate from")
    if flat.size % m_b:
        raise ValueError(f"{flat.size} indices do not split into blocks of {m_b}")
    h = entropy_bits(flat)
    index_bits = h * flat.size
    n_blocks = flat.size // m_b
    if image_pixels <= 0 or image_pixels > n_blocks * block_size * block_size:
        raise ValueError(f"{image_pixels} pixels cannot be covered by {n_blocks} blocks of {block_size}x{block_size}")
    overhead = 2.0 * n_blocks / image_pixels if modes_signaled else 0.0
    return RateEstimate(h, index_bits, overhead, index_bits / image_pixels + overhead)
