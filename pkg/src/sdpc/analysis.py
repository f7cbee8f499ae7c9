"""Measurement-domain correlation study and rate-distortion sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bitstream import EncodedStream, ModePolicy, estimate_rate
from .codec import (ALL_MODES, CodecConfig, Mode, build_candidates, decode_measurements, encode, previous_block,
                    select_mode)
from .image_io import Image, ScanOrder, to_blocks
from .recovery import RecoveryConfig, psnr, recover
from .sensing import generate_matrix, measure_image

LABELS = {
    "SQ": ModePolicy.NONE,
    "DPCM+SQ": ModePolicy.DPCM,
    "SDPC+SQ": ModePolicy.SDPC,
}
CSV_COLUMNS = ["image", "label", "scan", "q", "subrate", "bpp", "bpp_no_modes", "psnr_db", "iters", "converged", "seed"]


def correlation(u, v) -> float:
    """Normalized inner product u.v / (|u| |v|); 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(eq=False)
class CorrelationReport:
    """Per-block correlations with the previous block (cc1) and with the selected prediction (cc2).

    Entries are NaN for blocks lacking the needed neighbour; those blocks are
    left out of ``acc1``/``acc2`` and counted in ``excluded1``/``excluded2``.
    """

    cc1: np.ndarray
    cc2: np.ndarray
    modes: np.ndarray
    zero_vectors: int = 0

    @property
    def acc1(self) -> float:
        return float(np.nanmean(self.cc1))

    @property
    def acc2(self) -> float:
        return float(np.nanmean(self.cc2))

    @property
    def excluded1(self) -> int:
        return int(np.isnan(self.cc1).sum())

    @property
    def excluded2(self) -> int:
        return int(np.isnan(self.cc2).sum())

    def mode_percentages(self) -> dict[Mode, float]:
        used = self.modes[self.modes >= 0]
        if used.size == 0:
            return {m: 0.0 for m in ALL_MODES}
        return {m: 100.0 * np.count_nonzero(used == m) / used.size for m in ALL_MODES}


def acc_study(img: Image, block_size: int = 16, subrate: float = 0.5, seed: int = 1,
              scan_order: ScanOrder = ScanOrder.RASTER) -> CorrelationReport:
    """Correlation and mode-usage statistics on clean (unquantized) measurements."""
    blocks, lattice = to_blocks(img, block_size, scan_order)
    grid = measure_image(generate_matrix(block_size, subrate, seed), blocks, lattice)
    # q -> 0 limit: neighbours are the clean measurements
    grid.reconstructed = grid.vectors
    n = lattice.n
    cc1 = np.full(n, np.nan)
    cc2 = np.full(n, np.nan)
    modes = np.full(n, -1, dtype=np.int8)
    zeros = int(np.count_nonzero(~grid.vectors.any(axis=1)))
    for i in range(n):
        row, col = lattice.position(i)
        x = grid.vectors[i]
        prev = previous_block(lattice, row, col)
        if prev is not None:
            cc1[i] = correlation(x, grid.vectors[prev])
        mode, pred = select_mode(x, build_candidates(grid, (row, col)))
        if mode is not None:
            cc2[i] = correlation(x, pred)
            modes[i] = mode
    return CorrelationReport(cc1, cc2, modes, zeros)


@dataclass
class RdPoint:
    image: str
    label: str
    scan: str
    q: float
    subrate: float
    bpp: float
    bpp_no_modes: float
    psnr_db: float
    iters: int
    converged: bool
    seed: int = 1
    file_bits: int = field(default=0, repr=False)
    index_bits: float = field(default=0.0, repr=False)


def codec_config(label: str, q: float, subrate: float, seed: int = 1, block_size: int = 16,
                 scan_order: ScanOrder = ScanOrder.RASTER) -> CodecConfig:
    try:
        policy = LABELS[label]
    except KeyError:
        raise ValueError(f"unknown configuration label {label!r}; expected one of {sorted(LABELS)}") from None
    return CodecConfig(policy, block_size, subrate, q, seed, scan_order)


def rate_of(img: Image, cfg: CodecConfig, matrix=None):
    stream, report = encode(img, cfg, matrix)
    rate = estimate_rate(stream.indices, cfg.block_size, stream.header.m_b,
                         img.width * img.height, cfg.mode_policy.signals_modes)
    return rate, stream, report


def rd_point(img: Image, name: str, label: str, q: float, subrate: float, seed: int = 1,
             block_size: int = 16, scan_order: ScanOrder = ScanOrder.RASTER,
             recovery: dict | None = None, matrix=None) -> RdPoint:
    """encode -> rate estimate -> decode -> recover -> PSNR for one configuration."""
    cfg = codec_config(label, q, subrate, seed, block_size, scan_order)
    rate, stream, report = rate_of(img, cfg, matrix)
    data = stream.to_bytes()
    grid = decode_measurements(EncodedStream.from_bytes(data))
    result = recover(grid, report.matrix, RecoveryConfig.for_step(q, **(recovery or {})), img.width, img.height)
    return RdPoint(
        image=name,
        label=label,
        scan=scan_order.name.lower(),
        q=float(q),
        subrate=float(subrate),
        bpp=rate.total_bpp,
        bpp_no_modes=rate.index_bpp,
        psnr_db=psnr(result.image, img),
        iters=result.iterations,
        converged=result.converged,
        seed=seed,
        file_bits=8 * len(data),
        index_bits=rate.index_bits,
    )


def rd_sweep(img: Image, configs, seed: int = 1, name: str = "image", block_size: int = 16,
             scan_order: ScanOrder = ScanOrder.RASTER, recovery: dict | None = None) -> list[RdPoint]:
    """One RdPoint per (label, q, subrate) in ``configs``, sorted by label then q."""
    points = [
        rd_point(img, name, label, q, s, seed, block_size, scan_order, recovery)
        for label, q, s in configs
    ]
    return sort_points(points)


def sort_points(points: list[RdPoint]) -> list[RdPoint]:
    return sorted(points, key=lambda p: (p.image, p.seed, p.scan, p.label, p.subrate, p.q))


def fit_step(img: Image, label: str, subrate: float, target_bpp: float, seed: int = 1,
             block_size: int = 16, scan_order: ScanOrder = ScanOrder.RASTER,
             lo: float = 1e-2, hi: float = 1e4, iters: int = 40) -> float:
    """Bisect log q so the estimated bitrate lands on ``target_bpp``.

    Returns the smallest step found whose rate does not exceed the target.
    """
    matrix = generate_matrix(block_size, subrate, seed)

    def bpp(q):
        return rate_of(img, codec_config(label, q, subrate, seed, block_size, scan_order), matrix)[0].total_bpp

    if bpp(hi) > target_bpp:
        return hi
    if bpp(lo) <= target_bpp:
        return lo
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if bpp(math.exp(mid)) > target_bpp:
            a = mid
        else:
            b = mid
        if b - a < 1e-4:
            break
    return math.exp(b)


def write_csv(points: list[RdPoint], fh=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in points:
        writer.writerow([
            p.image, p.label, p.scan, f"{p.q:.6g}", f"{p.subrate:.6g}", f"{p.bpp:.6f}",
            f"{p.bpp_no_modes:.6f}", f"{p.psnr_db:.4f}", p.iters, int(p.converged), p.seed,
        ])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def plot_data(points: list[RdPoint]) -> str:
    """JSON mapping ``image/label`` to bpp-sorted [bpp, psnr] pairs."""
    curves: dict[str, list] = {}
    for p in points:
        curves.setdefault(f"{p.image}/{p.label}", []).append([round(p.bpp, 6), round(p.psnr_db, 4)])
    return json.dumps({k: sorted(v) for k, v in sorted(curves.items())}, indent=1)


def point_dict(p: RdPoint) -> dict:
    return asdict(p)
