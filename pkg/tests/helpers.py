"""Shared synthetic-data builders for the test suite."""

import numpy as np


def smooth_field(h, w, rng, decay=32.0):
    """Smooth random field in [0, 1] via a low-pass random Fourier spectrum."""
    spec = rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    envelope = np.exp(-np.sqrt(fy * fy + fx * fx) * decay)
    field = np.fft.ifft2(spec * envelope).real
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo + 1e-12)


def clean_patch(size=64, seed=0):
    """A smooth 4-channel clean patch in [0.1, 0.9] (stand-in for a natural RAW crop)."""
    rng = np.random.default_rng(seed)
    base = smooth_field(size, size, rng)
    tint = smooth_field(size, size, rng, decay=16.0)
    arr = np.empty((1, 4, size, size))
    gains = (0.9, 1.0, 1.0, 0.8)
    for c in range(4):
        mix = 0.75 * base + 0.25 * tint
        arr[0, c] = 0.12 + 0.72 * gains[c] * mix
    return np.clip(arr, 0.0, 1.0)


def clean_patches(count, size=64, seed=0):
    return [clean_patch(size, seed=seed * 10007 + i) for i in range(count)]
