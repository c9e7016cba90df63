"""Haar transform: hand-derived band values, exact inversion, energy, gradients."""

import numpy as np
import pytest

from burstdenoise import autodiff as ad
from burstdenoise.autodiff import Tensor, gradcheck
from burstdenoise.errors import ShapeError
from burstdenoise.wavelet import (WaveletBands, haar_dwt2d, haar_idwt2d, highfreq_stack)


@pytest.fixture(autouse=True)
def fresh_graph():
    ad.reset_graph()
    yield
    ad.reset_graph()


def bands_of(arr):
    return haar_dwt2d(Tensor(arr))


class TestForward:
    def test_constant_image(self):
        v = 0.37
        bands = bands_of(np.full((1, 3, 8, 8), v))
        assert np.allclose(bands.ll.data, 2 * v, rtol=0, atol=1e-15)
        for band in (bands.hl, bands.lh, bands.hh):
            assert np.all(band.data == 0.0)

    def test_single_block_hand_values(self):
        # block [1 2; 3 4]: LL = 5, HL = -1, LH = -2, HH = 0 (direct evaluation
        # of the four kernel formulas)
        bands = bands_of(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert bands.ll.item() == 5.0
        assert bands.hl.item() == -1.0
        assert bands.lh.item() == -2.0
        assert bands.hh.item() == 0.0

    def test_vertical_stripes_excite_hl_only(self):
        # columns alternate 0,1: column differences (HL) fire, row differences
        # (LH) vanish (hand evaluation on a 4x4 instance)
        img = np.zeros((1, 1, 4, 4))
        img[:, :, :, 1::2] = 1.0
        bands = bands_of(img)
        assert np.all(bands.hl.data == -1.0)
        assert np.all(bands.lh.data == 0.0)
        assert np.all(bands.hh.data == 0.0)

    def test_odd_extent_rejected(self):
        with pytest.raises(ShapeError, match="even"):
            bands_of(np.zeros((1, 1, 5, 4)))

    def test_band_shapes_match(self):
        bands = bands_of(np.zeros((2, 3, 8, 6)))
        for band in bands.as_tuple():
            assert band.shape == (2, 3, 4, 3)


class TestInverse:
    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            x = rng.normal(size=(1, 2, 16, 16))
            rec = haar_idwt2d(bands_of(x))
            worst = max(worst, np.max(np.abs(rec.data - x)))
        assert worst < 1e-10

    def test_zero_bands_give_zero_image(self):
        z = Tensor(np.zeros((1, 1, 4, 4)))
        rec = haar_idwt2d(WaveletBands(z, z, z, z))
        assert np.all(rec.data == 0.0)

    def test_inverse_of_hand_case(self):
        bands = WaveletBands(
            Tensor(np.array([[[[5.0]]]])), Tensor(np.array([[[[-1.0]]]])),
            Tensor(np.array([[[[-2.0]]]])), Tensor(np.array([[[[0.0]]]])))
        rec = haar_idwt2d(bands)
        assert np.array_equal(rec.data, np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))

    def test_band_shape_mismatch(self):
        with pytest.raises(ShapeError, match="share one shape"):
            WaveletBands(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))),
                         Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4))))


class TestProperties:
    def test_energy_preservation(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.normal(size=(1, 1, 16, 16))
            bands = bands_of(x)
            band_energy = sum(float((b.data ** 2).sum()) for b in bands.as_tuple())
            energy = float((x ** 2).sum())
            assert abs(band_energy - energy) / energy < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 2, 8, 8))
        y = rng.normal(size=(1, 2, 8, 8))
        a, b = 1.7, -0.3
        direct = bands_of(a * x + b * y)
        combined = bands_of(x), bands_of(y)
        for band in range(4):
            lhs = direct.as_tuple()[band].data
            rhs = a * combined[0].as_tuple()[band].data + b * combined[1].as_tuple()[band].data
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_gradient_linear_map(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)

        def f(t):
            bands = haar_dwt2d(t)
            acc = None
            for band in bands.as_tuple():
                term = ad.reduce_mean(ad.square(band))
                acc = term if acc is None else ad.add(acc, term)
            return acc

        report = gradcheck(f, [x], tol=1e-6)
        assert report.passed, report


class TestHighfreqStack:
    def test_constant_is_zero(self):
        out = highfreq_stack(Tensor(np.full((1, 4, 8, 8), 0.5)))
        assert np.all(out.data == 0.0)

    def test_shape_contract(self):
        out = highfreq_stack(Tensor(np.zeros((2, 4, 16, 12))))
        assert out.shape == (2, 12, 8, 6)

    def test_white_noise_energy_fraction(self):
        # white noise distributes energy uniformly over the four orthonormal
        # bands, so HL+LH+HH carry 3/4 of the total in expectation
        rng = np.random.default_rng(6)
        ratios = []
        for _ in range(100):
            x = rng.normal(size=(1, 1, 16, 16))
            hf = highfreq_stack(Tensor(x))
            ratios.append(float((hf.data ** 2).sum()) / float((x ** 2).sum()))
        assert abs(np.mean(ratios) - 0.75) < 0.05 * 0.75

    def test_gradient(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(1, 3, 8, 8)), requires_grad=True)
        report = gradcheck(lambda t: ad.reduce_mean(ad.square(highfreq_stack(t))), [x],
                           tol=1e-6)
        assert report.passed, report
