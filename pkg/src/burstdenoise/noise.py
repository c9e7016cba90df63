"""Parametric synthetic low-light RAW noise.

Models the dominant sensor effects as a data generator (never
differentiated): signal-dependent shot noise in Gaussian approximation,
signal-independent Gaussian read noise, a per-row offset shared across a
row's pixels and channels, a residual black-level bias, midtread
quantization to 2^bits - 1 steps, and final clipping to [0, 1].

    y = clip(quantize(x + n_shot + n_read + n_row + bias), 0, 1)

Identical (params, seed, clean input) always reproduce the output
bit-exactly; burst frames use seeds derived as seed + frame index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .data import RawImage, as_tensor
from .errors import DataError


@dataclass(frozen=True)
class NoiseParams:
    shot_gain: float = 0.0    # variance of shot noise = shot_gain * signal
    read_sigma: float = 0.0   # std of per-pixel Gaussian read noise
    row_sigma: float = 0.0    # std of per-row offset
    bias: float = 0.0         # black-level offset added before clipping
    quant_bits: int = 0       # 0 disables quantization, else 1..16
    seed: int = 0

    def __post_init__(self):
        if self.shot_gain < 0 or self.read_sigma < 0 or self.row_sigma < 0:
            raise DataError(
                f"noise gains/sigmas must be non-negative, got shot={self.shot_gain} "
                f"read={self.read_sigma} row={self.row_sigma}"
            )
        if self.quant_bits != 0 and not 1 <= self.quant_bits <= 16:
            raise DataError(f"quant_bits must be 0 or in [1, 16], got {self.quant_bits}")

    def with_seed(self, seed: int) -> "NoiseParams":
        return replace(self, seed=int(seed))


def synthesize_noise(clean, params: NoiseParams) -> RawImage:
    """One noisy realization of a clean frame (values must already be in [0, 1])."""
    x = as_tensor(clean).data
    if x.min() < 0.0 or x.max() > 1.0:
        raise DataError(
            f"clean input must lie in [0, 1], got range [{x.min():.4g}, {x.max():.4g}]"
        )
    rng = np.random.default_rng(params.seed)
    n, c, h, w = x.shape
    y = x.copy()
    y += rng.standard_normal(x.shape) * np.sqrt(params.shot_gain * x)
    y += rng.standard_normal(x.shape) * params.read_sigma
    y += rng.standard_normal((n, 1, h, 1)) * params.row_sigma
    y += params.bias
    if params.quant_bits > 0:
        levels = float(2 ** params.quant_bits - 1)
        y = np.round(y * levels) / levels
    np.clip(y, 0.0, 1.0, out=y)
    source = clean.source_id if isinstance(clean, RawImage) else ""
    return RawImage(Tensor(y), source_id=f"{source}+noise" if source else "noise")


def make_burst(clean, params: NoiseParams, count: int = 5) -> list[RawImage]:
    """``count`` independent noisy draws of the same clean frame (static scene)."""
    if count < 1:
        raise DataError(f"burst count must be >= 1, got {count}")
    return [synthesize_noise(clean, params.with_seed(params.seed + i)) for i in range(count)]
