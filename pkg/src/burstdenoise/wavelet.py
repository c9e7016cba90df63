"""Orthonormal single-level 2-D Haar transform and its inverse.

Per non-overlapping 2x2 block [a b; c d] of each channel:

    LL = (a + b + c + d) / 2      (approximation)
    HL = (a - b + c - d) / 2      (horizontal detail: column differences)
    LH = (a + b - c - d) / 2      (vertical detail: row differences)
    HH = (a - b - c + d) / 2      (diagonal detail)

The divisor 2 makes the transform orthonormal, so band energies sum to the
source energy and the adjoint of the forward map is its inverse. Odd
spatial extents are rejected rather than padded to keep the inverse exact.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

BAND_NAMES = ("ll", "hl", "lh", "hh")

# Signs of (a, b, c, d) in each band coefficient.
_BAND_SIGNS = {
    "ll": (1.0, 1.0, 1.0, 1.0),
    "hl": (1.0, -1.0, 1.0, -1.0),
    "lh": (1.0, 1.0, -1.0, -1.0),
    "hh": (1.0, -1.0, -1.0, 1.0),
}


class WaveletBands:
    """The four equally shaped band tensors of one decomposition."""

    def __init__(self, ll: Tensor, hl: Tensor, lh: Tensor, hh: Tensor):
        shapes = {t.shape for t in (ll, hl, lh, hh)}
        if len(shapes) != 1:
            raise ShapeError(f"wavelet bands must share one shape, got {sorted(shapes)}")
        self.ll = ll
        self.hl = hl
        self.lh = lh
        self.hh = hh

    def as_tuple(self):
        return (self.ll, self.hl, self.lh, self.hh)


def _check_even(h, w):
    if h % 2 or w % 2:
        raise ShapeError(f"haar transform needs even spatial extents, got {h}x{w}")


def _quads(data):
    a = data[:, :, 0::2, 0::2]
    b = data[:, :, 0::2, 1::2]
    c = data[:, :, 1::2, 0::2]
    d = data[:, :, 1::2, 1::2]
    return a, b, c, d


def haar_band(image: Tensor, band: str) -> Tensor:
    """Extract one band; a linear map, so backward is the transposed scatter."""
    if band not in _BAND_SIGNS:
        raise ShapeError(f"unknown band {band!r}, expected one of {BAND_NAMES}")
    n, c, h, w = image.shape
    _check_even(h, w)
    sa, sb, sc, sd = _BAND_SIGNS[band]
    a, b, cc, d = _quads(image.data)
    out = (sa * a + sb * b + sc * cc + sd * d) * 0.5

    def bwd(g):
        dx = np.zeros_like(image.data)
        dx[:, :, 0::2, 0::2] = sa * 0.5 * g
        dx[:, :, 0::2, 1::2] = sb * 0.5 * g
        dx[:, :, 1::2, 0::2] = sc * 0.5 * g
        dx[:, :, 1::2, 1::2] = sd * 0.5 * g
        return (dx,)

    return ad.record_op(f"haar_{band}", out, (image,), bwd)


def haar_dwt2d(image: Tensor) -> WaveletBands:
    """Single-level orthonormal Haar decomposition of an N x C x H x W tensor."""
    return WaveletBands(*(haar_band(image, b) for b in BAND_NAMES))


def haar_idwt2d(bands: WaveletBands) -> Tensor:
    """Exact inverse: reassembles each 2x2 block from the four coefficients."""
    ll, hl, lh, hh = bands.as_tuple()
    n, c, hh2, ww2 = ll.shape
    LL, HL, LH, HH = ll.data, hl.data, lh.data, hh.data
    out = np.empty((n, c, hh2 * 2, ww2 * 2), dtype=np.float64)
    out[:, :, 0::2, 0::2] = (LL + HL + LH + HH) * 0.5
    out[:, :, 0::2, 1::2] = (LL - HL + LH - HH) * 0.5
    out[:, :, 1::2, 0::2] = (LL + HL - LH - HH) * 0.5
    out[:, :, 1::2, 1::2] = (LL - HL - LH + HH) * 0.5

    def bwd(g):
        a, b, cc, d = _quads(g)
        return (
            (a + b + cc + d) * 0.5,
            (a - b + cc - d) * 0.5,
            (a + b - cc - d) * 0.5,
            (a - b - cc + d) * 0.5,
        )

    return ad.record_op("haar_idwt", out, bands.as_tuple(), bwd)


def highfreq_stack(image: Tensor) -> Tensor:
    """HL, LH, HH concatenated along channels (in that order); LL is discarded.

    N x C x H x W in, N x 3C x H/2 x W/2 out. Constant images map to zero.
    """
    return ad.concat([haar_band(image, b) for b in ("hl", "lh", "hh")], axis=1)
