"""PSNR/SSIM closed forms, symmetry, and the independent SSIM reimplementation."""

import numpy as np
import pytest

from burstdenoise.autodiff import Tensor
from burstdenoise.errors import ShapeError
from burstdenoise.metrics import (MetricReport, evaluate_pairs, gaussian_window, psnr, ssim,
                                  SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW)


def const_pair(a, b, h=16, w=16):
    return Tensor(np.full((1, 4, h, w), a)), Tensor(np.full((1, 4, h, w), b))


class TestPsnr:
    def test_identical_capped_at_100(self):
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 4, 8, 8)))
        assert psnr(x, x) == 100.0

    def test_offset_closed_forms(self):
        # MSE of a constant offset d is d^2, so PSNR = 20*log10(1/d);
        # exact in reals, realized here to float rounding
        test, ref = const_pair(0.6, 0.5)
        assert psnr(test, ref) == pytest.approx(20.0, abs=1e-9)
        test, ref = const_pair(0.51, 0.5)
        assert psnr(test, ref) == pytest.approx(40.0, abs=1e-9)

    def test_exact_power_ratio(self):
        # peak 1.25 and offset 0.125 are exact binary fractions with ratio
        # 10, so peak^2/MSE is exactly 100 and the result exactly 20 dB
        test, ref = const_pair(0.625, 0.5)
        assert psnr(test, ref, peak=1.25) == 20.0

    def test_symmetry_exact(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)))
        b = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_under_noise(self):
        rng = np.random.default_rng(2)
        ref = rng.uniform(0.2, 0.8, (1, 4, 16, 16))
        values = []
        for sigma in (0.01, 0.05, 0.1):
            noisy = ref + np.random.default_rng(7).normal(0, sigma, ref.shape)
            values.append(psnr(Tensor(noisy), Tensor(ref)))
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.zeros((1, 4, 8, 4))))

    def test_bad_peak(self):
        a, b = const_pair(0.5, 0.5)
        with pytest.raises(ShapeError):
            psnr(a, b, peak=0.0)


def ssim_reference(test, ref):
    """Independent straightforward per-window SSIM (the dual-implementation oracle)."""
    half = SSIM_WINDOW // 2
    coords = np.arange(SSIM_WINDOW) - half
    g1 = np.exp(-(coords ** 2) / (2 * SSIM_SIGMA ** 2))
    kernel = np.outer(g1, g1)
    kernel = kernel / kernel.sum()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    values = []
    for n in range(test.shape[0]):
        for c in range(test.shape[1]):
            x = test[n, c]
            y = ref[n, c]
            h, w = x.shape
            window_vals = []
            for i in range(h - SSIM_WINDOW + 1):
                for j in range(w - SSIM_WINDOW + 1):
                    wx = x[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
                    wy = y[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
                    mx = (kernel * wx).sum()
                    my = (kernel * wy).sum()
                    sxx = (kernel * wx * wx).sum() - mx * mx
                    syy = (kernel * wy * wy).sum() - my * my
                    sxy = (kernel * wx * wy).sum() - mx * my
                    num = (2 * mx * my + c1) * (2 * sxy + c2)
                    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
                    window_vals.append(num / den)
            values.append(np.mean(window_vals))
    return float(np.mean(values))


class TestSsim:
    def test_identical_is_exactly_one(self):
        x = Tensor(np.random.default_rng(3).uniform(0, 1, (1, 4, 16, 16)))
        assert ssim(x, x) == 1.0

    def test_inverted_below_one(self):
        rng = np.random.default_rng(4)
        ref = rng.uniform(0.1, 0.9, (1, 4, 16, 16))
        assert ssim(Tensor(1.0 - ref), Tensor(ref)) < 1.0

    def test_agrees_with_reference_implementation(self):
        rng = np.random.default_rng(5)
        test = rng.uniform(0, 1, (1, 4, 32, 32))
        ref = np.clip(test + rng.normal(0, 0.1, test.shape), 0, 1)
        fast = ssim(Tensor(test), Tensor(ref))
        slow = ssim_reference(test, ref)
        assert abs(fast - slow) < 1e-10

    def test_window_sums_to_one(self):
        assert gaussian_window().sum() == pytest.approx(1.0, abs=1e-12)

    def test_too_small_image(self):
        with pytest.raises(ShapeError, match="window"):
            ssim(Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.zeros((1, 4, 8, 8))))


class TestReport:
    def test_aggregate_is_arithmetic_mean(self):
        rng = np.random.default_rng(6)
        pairs = []
        for i in range(4):
            ref = rng.uniform(0.2, 0.8, (1, 4, 16, 16))
            noisy = np.clip(ref + rng.normal(0, 0.02 * (i + 1), ref.shape), 0, 1)
            pairs.append((f"img{i}", Tensor(noisy), Tensor(ref)))
        report = evaluate_pairs(pairs)
        assert len(report.names) == 4
        assert abs(report.mean_psnr - np.mean(report.psnr_db)) < 1e-12
        assert abs(report.mean_ssim - np.mean(report.ssim)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            evaluate_pairs([])
