"""Image recovery from decoded block measurements, and PSNR.

The recovery is a smoothed projected Landweber iteration: Wiener smoothing,
a data-consistency (Landweber) step, hard thresholding of the image's
orthonormal 2-D DCT coefficients, and a second Landweber step. The threshold
starts at half the largest coefficient of the back-projected estimate and
shrinks geometrically down to a floor tied to the quantizer step, so early
iterations only keep dominant coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft
from scipy.ndimage import uniform_filter

from .image_io import BlockLattice, Image, array_from_blocks, blocks_from_array, to_pixels
from .sensing import MeasurementGrid, SensingMatrix, back_project, measure_blocks


@dataclass(frozen=True)
class RecoveryConfig:
    max_iters: int = 200
    stop_tol: float = 1e-4
    tau0: float | None = None  # None: half the largest |coefficient| of the initial estimate
    tau_decay: float = 0.9
    tau_floor: float = 2.5
    smoothing_window: int = 3

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tau0 is not None and not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if not (0 < self.tau_decay < 1) or self.tau_floor < 0:
            raise ValueError("need tau_decay in (0, 1) and tau_floor >= 0")
        if self.smoothing_window < 3 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing window must be an odd integer >= 3")

    @classmethod
    def for_step(cls, q: float, **overrides) -> "RecoveryConfig":
        """Defaults for quantizer step ``q``: threshold floor 2 + q/2."""
        overrides.setdefault("tau_floor", 2.0 + 0.5 * q)
        return cls(**overrides)

    def thresholds(self, tau0: float):
        """Yield the per-iteration threshold sequence starting from ``tau0``."""
        tau = tau0
        for _ in range(self.max_iters):
            yield max(tau, self.tau_floor)
            tau *= self.tau_decay


@dataclass(eq=False)
class RecoveryResult:
    image: Image
    estimate: np.ndarray  # unclamped padded float image
    iterations: int
    converged: bool


def init_estimate(grid: MeasurementGrid, matrix: SensingMatrix) -> np.ndarray:
    """Back-project every block, Phi_B^T x~, onto the padded image plane."""
    return array_from_blocks(back_project(matrix, grid.reconstructed), grid.lattice)


def landweber(estimate: np.ndarray, measurements: np.ndarray, matrix: SensingMatrix, lattice: BlockLattice) -> np.ndarray:
    """One unit-step Landweber update per block: y += Phi^T (x - Phi y)."""
    blocks = blocks_from_array(estimate, lattice)
    residual = measurements - measure_blocks(matrix, blocks)
    return array_from_blocks(blocks + back_project(matrix, residual), lattice)


def wiener_smooth(img: np.ndarray, window: int = 3) -> np.ndarray:
    """Local mean/variance Wiener filter; noise power is the median local variance."""
    mean = uniform_filter(img, window, mode="reflect")
    var = np.maximum(uniform_filter(img * img, window, mode="reflect") - mean * mean, 0.0)
    noise = float(np.median(var))
    gain = np.where(var > noise, (var - noise) / np.maximum(var, 1e-300), 0.0)
    return mean + gain * (img - mean)


def dct2(img: np.ndarray) -> np.ndarray:
    return fft.dctn(img, norm="ortho")


def idct2(coef: np.ndarray) -> np.ndarray:
    return fft.idctn(coef, norm="ortho")


def hard_threshold(coef: np.ndarray, tau: float) -> np.ndarray:
    return np.where(np.abs(coef) >= tau, coef, 0.0)


def recover(grid: MeasurementGrid, matrix: SensingMatrix, cfg: RecoveryConfig | None = None,
            original_w: int | None = None, original_h: int | None = None) -> RecoveryResult:
    """Reconstruct the image from ``grid.reconstructed``.

    Stops when the relative change between iterates drops below
    ``cfg.stop_tol`` or after ``cfg.max_iters`` iterations; the last iterate
    is returned either way, with ``converged`` telling which.
    """
    cfg = cfg or RecoveryConfig()
    lattice = grid.lattice
    xt = grid.reconstructed
    est = init_estimate(grid, matrix)
    tau0 = cfg.tau0 if cfg.tau0 is not None else 0.5 * float(np.abs(dct2(est)).max())
    converged = False
    it = 0
    for it, tau in enumerate(cfg.thresholds(max(tau0, 1e-12)), start=1):
        prev = est
        est = wiener_smooth(est, cfg.smoothing_window)
        est = landweber(est, xt, matrix, lattice)
        est = idct2(hard_threshold(dct2(est), tau))
        est = landweber(est, xt, matrix, lattice)
        change = np.linalg.norm(est - prev) / max(np.linalg.norm(prev), 1e-12)
        # only stop once the threshold has settled, not during the warm-up
        if change < cfg.stop_tol and tau <= cfg.tau_floor:
            converged = True
            break
    w = lattice.padded_width if original_w is None else original_w
    h = lattice.padded_height if original_h is None else original_h
    return RecoveryResult(Image(to_pixels(est[:h, :w])), est, it, converged)


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB for 8-bit images; ``math.inf`` when identical."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)
