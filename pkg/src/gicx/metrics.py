"""Reconstruction quality metrics and report assembly."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ParameterError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(_LUMA_WEIGHTS, img, axes=(0, 0))
    raise DimensionError(f"expected (H, W) or (3, H, W) image, got {img.shape}")


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale structural similarity on the luma plane.

    Uses the conventional 11x11 Gaussian window (sigma 1.5) and stability
    constants (K1, K2) = (0.01, 0.03) relative to the peak.
    """
    xa = _to_luma(a)
    xb = _to_luma(b)
    if xa.shape != xb.shape:
        raise DimensionError(f"ssim: shapes differ {xa.shape} vs {xb.shape}")
    h, w = xa.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ParameterError(
            f"ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    wa = sliding_window_view(xa, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(xb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = np.einsum("ijkl,kl->ij", wa, kern)
    mu_b = np.einsum("ijkl,kl->ij", wb, kern)
    m_aa = np.einsum("ijkl,ijkl,kl->ij", wa, wa, kern)
    m_bb = np.einsum("ijkl,ijkl,kl->ij", wb, wb, kern)
    m_ab = np.einsum("ijkl,ijkl,kl->ij", wa, wb, kern)
    var_a = m_aa - mu_a * mu_a
    var_b = m_bb - mu_b * mu_b
    cov = m_ab - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    """Per-image quality rows plus corpus summary statistics."""

    rows: list = field(default_factory=list)

    def add(self, image: str, psnr_db: float, ssim_value: float, bpp: float) -> None:
        self.rows.append({"image": image, "psnr_db": psnr_db,
                          "ssim": ssim_value, "bpp": bpp})

    def _column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=np.float64)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self._column("psnr_db")))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self._column("ssim")))

    @property
    def mean_bpp(self) -> float:
        return float(np.mean(self._column("bpp")))

    @property
    def std_bpp(self) -> float:
        return float(np.std(self._column("bpp")))

    def write_csv(self, path) -> None:
        """Data rows followed by one summary row (image name 'mean')."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr_db", "ssim", "bpp", "bpp_std"])
            for r in self.rows:
                writer.writerow([r["image"], f"{r['psnr_db']:.6f}",
                                 f"{r['ssim']:.6f}", f"{r['bpp']:.8f}", ""])
            writer.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}",
                             f"{self.mean_bpp:.8f}", f"{self.std_bpp:.8f}"])
