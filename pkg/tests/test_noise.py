"""Noise synthesis: identity, Monte-Carlo statistics, determinism, quantization.

Monte-Carlo oracles: with clean = 0 and read noise sigma, clipping at zero
rectifies the Gaussian, so E[y] = sigma / sqrt(2*pi) (the mean of
max(N(0, sigma), 0)). With clean = 0.5 and shot_gain g, per-pixel variance
is g * 0.5 and clipping is negligible (5 sigma from both bounds).
"""

import numpy as np
import pytest

from burstdenoise.autodiff import Tensor
from burstdenoise.data import RawImage
from burstdenoise.errors import DataError
from burstdenoise.metrics import psnr
from burstdenoise.noise import NoiseParams, make_burst, synthesize_noise


def raw_const(value, h=32, w=32):
    return RawImage(Tensor(np.full((1, 4, h, w), value)))


class TestSynthesize:
    def test_all_zero_params_is_identity(self):
        rng = np.random.default_rng(0)
        clean = RawImage(Tensor(rng.uniform(0, 1, (1, 4, 16, 16))))
        out = synthesize_noise(clean, NoiseParams(seed=5))
        assert np.array_equal(out.array, clean.array)

    def test_clipping_rectifies_read_noise(self):
        # 10^5+ pixels; empirical mean within 3 standard errors of the
        # rectified-normal mean sigma/sqrt(2*pi)
        sigma = 0.1
        clean = raw_const(0.0, h=200, w=200)  # 160000 pixels
        out = synthesize_noise(clean, NoiseParams(read_sigma=sigma, seed=1))
        n = out.array.size
        expected_mean = sigma / np.sqrt(2 * np.pi)
        # var of max(N,0) = sigma^2*(1/2 - 1/(2*pi))
        std_single = sigma * np.sqrt(0.5 - 1.0 / (2 * np.pi))
        stderr = std_single / np.sqrt(n)
        assert abs(out.array.mean() - expected_mean) < 3 * stderr
        assert out.array.min() >= 0.0

    def test_shot_noise_variance(self):
        # clean = 0.5, shot_gain 0.02 -> variance 0.01, within 5% over 10^6 samples
        clean = raw_const(0.5, h=500, w=500)
        out = synthesize_noise(clean, NoiseParams(shot_gain=0.02, seed=2))
        var = out.array.var()
        assert abs(var - 0.01) / 0.01 < 0.05

    def test_row_noise_shared_across_row(self):
        clean = raw_const(0.5, h=8, w=8)
        out = synthesize_noise(clean, NoiseParams(row_sigma=0.05, seed=3))
        delta = out.array - clean.array
        # every channel and column in one row carries the same offset
        for r in range(8):
            row_vals = delta[0, :, r, :]
            assert np.ptp(row_vals) < 1e-15
        assert np.ptp(delta[0, 0, :, 0]) > 0.0

    def test_determinism(self):
        clean = raw_const(0.3)
        params = NoiseParams(shot_gain=0.01, read_sigma=0.05, row_sigma=0.01,
                             bias=0.002, quant_bits=12, seed=77)
        a = synthesize_noise(clean, params)
        b = synthesize_noise(clean, params)
        assert np.array_equal(a.array, b.array)

    def test_quantization_grid(self):
        for bits in (1, 4, 8, 12):
            clean = RawImage(Tensor(np.random.default_rng(bits).uniform(0, 1, (1, 4, 8, 8))))
            out = synthesize_noise(clean, NoiseParams(quant_bits=bits, seed=0))
            levels = 2 ** bits - 1
            scaled = out.array * levels
            assert np.max(np.abs(scaled - np.round(scaled))) < 1e-9

    def test_output_always_in_range(self):
        clean = raw_const(0.9)
        out = synthesize_noise(clean, NoiseParams(read_sigma=0.5, bias=0.3, seed=4))
        assert out.array.min() >= 0.0 and out.array.max() <= 1.0

    def test_psnr_monotone_in_read_sigma(self):
        clean = RawImage(Tensor(np.random.default_rng(9).uniform(0.2, 0.8, (1, 4, 32, 32))))
        psnrs = [psnr(synthesize_noise(clean, NoiseParams(read_sigma=s, seed=42)).array,
                      clean.array)
                 for s in (0.01, 0.05, 0.1)]
        assert psnrs[0] > psnrs[1] > psnrs[2]

    def test_clean_out_of_range_rejected(self):
        bad = RawImage.__new__(RawImage)
        bad.tensor = Tensor(np.full((1, 4, 4, 4), 1.5))
        bad.source_id = ""
        with pytest.raises(DataError, match=r"\[0, 1\]"):
            synthesize_noise(bad, NoiseParams())

    def test_invalid_params_rejected(self):
        with pytest.raises(DataError):
            NoiseParams(read_sigma=-0.1)
        with pytest.raises(DataError):
            NoiseParams(quant_bits=17)


class TestBurst:
    def test_five_distinct_frames(self):
        clean = raw_const(0.5)
        burst = make_burst(clean, NoiseParams(read_sigma=0.05, seed=0), 5)
        assert len(burst) == 5
        for i in range(5):
            for j in range(i + 1, 5):
                assert not np.array_equal(burst[i].array, burst[j].array)

    def test_zero_noise_gives_copies(self):
        clean = raw_const(0.25)
        burst = make_burst(clean, NoiseParams(seed=3), 5)
        for frame in burst:
            assert np.array_equal(frame.array, clean.array)

    def test_seed_derivation_is_seed_plus_index(self):
        clean = raw_const(0.5)
        params = NoiseParams(read_sigma=0.05, seed=10)
        burst = make_burst(clean, params, 3)
        for i in range(3):
            direct = synthesize_noise(clean, params.with_seed(10 + i))
            assert np.array_equal(burst[i].array, direct.array)

    def test_averaging_reduces_mse_fivefold(self):
        # read noise only: averaging 5 iid frames divides the MSE by ~5
        clean = RawImage(Tensor(np.random.default_rng(8).uniform(0.3, 0.7, (1, 4, 64, 64))))
        params = NoiseParams(read_sigma=0.05, seed=21)
        single_mses = []
        avg_mses = []
        for trial in range(20):
            burst = make_burst(clean, params.with_seed(1000 + 10 * trial), 5)
            stack = np.stack([f.array for f in burst])
            single_mses.append(np.mean((stack[2] - clean.array) ** 2))
            avg_mses.append(np.mean((stack.mean(axis=0) - clean.array) ** 2))
        ratio = np.mean(avg_mses) / np.mean(single_mses)
        assert abs(ratio - 0.2) < 0.02  # within 10% of 1/5

    def test_count_must_be_positive(self):
        with pytest.raises(DataError):
            make_burst(raw_const(0.5), NoiseParams(), 0)
