"""PSNR and SSIM on packed RAW tensors (no demosaic).

SSIM follows the standard settings: 11x11 Gaussian window with sigma 1.5,
K1 = 0.01, K2 = 0.03, dynamic range 1.0, computed over valid windows per
channel and averaged. PSNR of identical images is reported as the capped
value 100 dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import to_array
from .errors import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair_arrays(test, ref, op):
    a = to_array(test)
    b = to_array(ref)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr(test, ref, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE) in dB over all channels and pixels, capped at 100."""
    if peak <= 0:
        raise ShapeError(f"psnr: peak must be positive, got {peak}")
    a, b = _pair_arrays(test, ref, "psnr")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (sum 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(plane, kernel):
    win = sliding_window_view(plane, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(test, ref) -> float:
    """Mean SSIM over valid 11x11 windows, per channel, averaged across channels."""
    a, b = _pair_arrays(test, ref, "ssim")
    _, channels, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    values = []
    for n in range(a.shape[0]):
        for c in range(channels):
            x = a[n, c]
            y = b[n, c]
            mu_x = _windowed_mean(x, kernel)
            mu_y = _windowed_mean(y, kernel)
            e_xx = _windowed_mean(x * x, kernel)
            e_yy = _windowed_mean(y * y, kernel)
            e_xy = _windowed_mean(x * y, kernel)
            var_x = e_xx - mu_x * mu_x
            var_y = e_yy - mu_y * mu_y
            cov = e_xy - mu_x * mu_y
            num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            values.append((num / den).mean())
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM plus their arithmetic means."""

    names: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def add(self, name, psnr_value, ssim_value):
        self.names.append(name)
        self.psnr_db.append(float(psnr_value))
        self.ssim.append(float(ssim_value))


def evaluate_pairs(pairs) -> MetricReport:
    """pairs: iterable of (name, test image, reference image)."""
    report = MetricReport()
    for name, test, ref in pairs:
        report.add(name, psnr(test, ref), ssim(test, ref))
    if not report.names:
        raise ShapeError("evaluate_pairs: no image pairs given")
    return report
