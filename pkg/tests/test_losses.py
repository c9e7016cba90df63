"""Similarity and contrastive loss: exact closed forms, hand values, gradients.

Hand-derived constants used below (direct evaluation of the similarity
formula on constant-direction features with C = 2 unit pixel vectors):
  fx = (1,0), fy = (0,1): cosine 0, channel-mean L1 = 1
    distance bracket = 1 + 2 = 3  -> s = 3HW/(2HW) = 1.5 exactly
  fx = (1,0), fy = (-1,0): cosine -1, channel-mean L1 = 1
    distance bracket = 2 + 2 = 4  -> s = 2.0 exactly
"""

import numpy as np
import pytest

from burstdenoise import autodiff as ad
from burstdenoise.autodiff import Tensor, gradcheck
from burstdenoise.errors import ShapeError
from burstdenoise.losses import (DEFAULT_LAYER_WEIGHTS, LossConfig, closs, feature_l1,
                                 final_loss, perceptual_distance, pixel_similarity)
from burstdenoise.wnet import FrozenWnet, WnetConfig, init_wnet


@pytest.fixture(autouse=True)
def fresh_graph():
    ad.reset_graph()
    yield
    ad.reset_graph()


def scalar_feature(value):
    return Tensor(np.array([[[[float(value)]]]]))


def direction_feature(vec, h=4, w=4):
    """Every pixel carries the same C-vector."""
    c = len(vec)
    arr = np.zeros((1, c, h, w))
    for i, v in enumerate(vec):
        arr[0, i] = v
    return Tensor(arr)


class TestPixelSimilarity:
    def test_self_literal_is_half_exactly(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 4, 8, 8)))
        assert pixel_similarity(x, x, "literal").item() == 0.5

    def test_self_distance_is_zero_exactly(self):
        x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 8, 8)))
        assert pixel_similarity(x, x, "distance").item() == 0.0

    def test_self_distance_zero_even_for_zero_features(self):
        x = Tensor(np.zeros((1, 4, 4, 4)))
        assert pixel_similarity(x, x, "distance").item() == 0.0

    def test_hand_values_c1(self):
        # C=1, H=W=1, fx=3, fy=4: literal (1 + 2*1)/2 = 1.5, distance (0 + 2)/2 = 1
        fx, fy = scalar_feature(3.0), scalar_feature(4.0)
        assert pixel_similarity(fx, fy, "literal").item() == 1.5
        assert pixel_similarity(fx, fy, "distance").item() == 1.0

    def test_hand_values_c2_directions(self):
        f = direction_feature((1.0, 0.0))
        p = direction_feature((0.0, 1.0))
        n = direction_feature((-1.0, 0.0))
        assert pixel_similarity(p, f, "distance").item() == 1.5
        assert pixel_similarity(n, f, "distance").item() == 2.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(1, 3, 6, 6)))
        y = Tensor(rng.normal(size=(1, 3, 6, 6)))
        for variant in ("literal", "distance"):
            a = pixel_similarity(x, y, variant).item()
            b = pixel_similarity(y, x, variant).item()
            assert abs(a - b) < 1e-12

    def test_non_negative_distance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = Tensor(rng.normal(size=(1, 3, 4, 4)))
            y = Tensor(rng.normal(size=(1, 3, 4, 4)))
            assert pixel_similarity(x, y, "distance").item() >= 0.0

    def test_one_sided_degenerate_contributes_one(self):
        # one all-zero pixel vector against a unit vector: distance bracket 1 + L1
        f = direction_feature((0.0, 0.0), h=1, w=1)
        g = direction_feature((1.0, 0.0), h=1, w=1)
        # bracket = 1 (one-sided cos) + 2*(1/2)*1 = 2 -> s = 2/(2*1*1) = 1
        assert pixel_similarity(f, g, "distance").item() == 1.0

    def test_per_sample_batching(self):
        rng = np.random.default_rng(4)
        a0 = rng.normal(size=(1, 3, 4, 4))
        a1 = rng.normal(size=(1, 3, 4, 4))
        b0 = rng.normal(size=(1, 3, 4, 4))
        b1 = rng.normal(size=(1, 3, 4, 4))
        batched = pixel_similarity(Tensor(np.concatenate([a0, a1])),
                                   Tensor(np.concatenate([b0, b1])), "distance")
        assert batched.shape == (2, 1, 1, 1)
        s0 = pixel_similarity(Tensor(a0), Tensor(b0), "distance").item()
        s1 = pixel_similarity(Tensor(a1), Tensor(b1), "distance").item()
        assert batched.data.reshape(-1)[0] == pytest.approx(s0, abs=1e-15)
        assert batched.data.reshape(-1)[1] == pytest.approx(s1, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pixel_similarity(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4))))

    def test_gradient(self):
        rng = np.random.default_rng(5)
        for variant in ("literal", "distance"):
            x = Tensor(rng.normal(size=(1, 4, 4, 4)), requires_grad=True)
            y = Tensor(rng.normal(size=(1, 4, 4, 4)), requires_grad=True)
            report = gradcheck(
                lambda a, b: ad.reduce_sum(pixel_similarity(a, b, variant)), [x, y])
            assert report.passed, (variant, report)


def random_pyramid(rng, requires_grad=False):
    return [Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=requires_grad)
            for _ in range(5)]


class TestCloss:
    def test_perfect_denoising_is_zero(self):
        rng = np.random.default_rng(6)
        p = random_pyramid(rng)
        n = random_pyramid(rng)
        f = [Tensor(t.data.copy()) for t in p]
        value = closs(f, p, n, LossConfig()).item()
        assert value == 0.0

    def test_anchor_equals_negative_blows_up(self):
        # f = n makes every denominator collapse to eps_ratio
        rng = np.random.default_rng(7)
        n = [Tensor(rng.normal(size=(1, 4, 16, 16))) for _ in range(5)]
        p = [Tensor(rng.normal(size=(1, 4, 16, 16))) for _ in range(5)]
        f = [Tensor(t.data.copy()) for t in n]
        value = closs(f, p, n, LossConfig()).item()
        assert value > 1e3

    def test_equal_ratio_weighted_sum(self):
        # all five layers share S_pos = 1.5 and S_neg = 2.0 exactly, so every
        # layer ratio is r = 1.5/(2 + eps) and the total is r * (47/32)
        config = LossConfig()
        f = [direction_feature((1.0, 0.0)) for _ in range(5)]
        p = [direction_feature((0.0, 1.0)) for _ in range(5)]
        n = [direction_feature((-1.0, 0.0)) for _ in range(5)]
        value = closs(f, p, n, config).item()
        r = 1.5 / (2.0 + config.eps_ratio)
        assert abs(value - r * (47.0 / 32.0)) < 1e-12

    def test_layer_weight_linearity(self):
        rng = np.random.default_rng(8)
        f, p, n = random_pyramid(rng), random_pyramid(rng), random_pyramid(rng)
        base = LossConfig()
        doubled = LossConfig(layer_weights=tuple(2 * w for w in DEFAULT_LAYER_WEIGHTS))
        assert closs(f, p, n, doubled).item() == 2.0 * closs(f, p, n, base).item()

    def test_endpoint_comparison(self):
        # moving the anchor from the negative to the positive end lowers the loss
        config = LossConfig()
        rng = np.random.default_rng(9)
        for _ in range(100):
            p = [Tensor(rng.normal(size=(1, 2, 4, 4))) for _ in range(5)]
            n = [Tensor(rng.normal(size=(1, 2, 4, 4))) for _ in range(5)]
            at_p = closs([Tensor(t.data.copy()) for t in p], p, n, config).item()
            at_n = closs([Tensor(t.data.copy()) for t in n], p, n, config).item()
            assert at_p < at_n

    def test_batch_mean(self):
        rng = np.random.default_rng(10)
        fa, pa, na = random_pyramid(rng), random_pyramid(rng), random_pyramid(rng)
        fb, pb, nb = random_pyramid(rng), random_pyramid(rng), random_pyramid(rng)
        va = closs(fa, pa, na, LossConfig()).item()
        vb = closs(fb, pb, nb, LossConfig()).item()
        cat = lambda xs, ys: [Tensor(np.concatenate([x.data, y.data])) for x, y in zip(xs, ys)]
        vboth = closs(cat(fa, fb), cat(pa, pb), cat(na, nb), LossConfig()).item()
        assert vboth == pytest.approx((va + vb) / 2.0, rel=1e-12)

    def test_wrong_pyramid_length(self):
        rng = np.random.default_rng(11)
        f, p, n = random_pyramid(rng), random_pyramid(rng), random_pyramid(rng)
        with pytest.raises(ShapeError, match="5 layers"):
            closs(f[:4], p, n, LossConfig())

    def test_gradient(self):
        rng = np.random.default_rng(12)
        f = [Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True) for _ in range(5)]
        p = [Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True) for _ in range(5)]
        n = [Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True) for _ in range(5)]

        def ffun(*ts):
            return closs(ts[0:5], ts[5:10], ts[10:15], LossConfig())

        report = gradcheck(ffun, f + p + n, max_coords=20, rng=np.random.default_rng(0))
        assert report.passed, report


@pytest.fixture(scope="module")
def tiny_frozen():
    cfg = WnetConfig(stage_widths=(2, 2, 2, 2, 2))
    return FrozenWnet(init_wnet(cfg, seed=42), cfg)


class TestPerceptualAndFinal:
    def test_identical_images_zero(self, tiny_frozen):
        x = Tensor(np.random.default_rng(13).uniform(0, 1, (1, 4, 16, 16)))
        assert perceptual_distance(x, Tensor(x.data.copy()), tiny_frozen).item() == 0.0

    def test_constant_images_zero(self, tiny_frozen):
        a = Tensor(np.full((1, 4, 16, 16), 0.2))
        b = Tensor(np.full((1, 4, 16, 16), 0.9))
        assert perceptual_distance(a, b, tiny_frozen).item() == 0.0

    def test_perceptual_gradient(self, tiny_frozen):
        rng = np.random.default_rng(14)
        d = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)), requires_grad=True)
        c = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)))
        report = gradcheck(lambda t: perceptual_distance(t, c, tiny_frozen), [d])
        assert report.passed, report

    def test_final_loss_zero_at_perfect_output(self, tiny_frozen):
        rng = np.random.default_rng(15)
        clean = Tensor(rng.uniform(0, 1, (1, 4, 16, 16)))
        noisy = Tensor(np.clip(clean.data + rng.normal(0, 0.1, clean.shape), 0, 1))
        total, breakdown = final_loss(Tensor(clean.data.copy()), clean, noisy,
                                      tiny_frozen, LossConfig())
        assert total.item() == 0.0
        assert breakdown["l1"] == 0.0
        assert breakdown["perceptual"] == 0.0
        assert breakdown["closs"] == 0.0

    def test_alpha_zero_reports_unweighted_closs(self, tiny_frozen):
        rng = np.random.default_rng(16)
        clean = Tensor(rng.uniform(0, 1, (1, 4, 16, 16)))
        noisy = Tensor(np.clip(clean.data + rng.normal(0, 0.1, clean.shape), 0, 1))
        out = Tensor(np.clip(clean.data + rng.normal(0, 0.05, clean.shape), 0, 1))
        total, breakdown = final_loss(out, clean, noisy, tiny_frozen, LossConfig(alpha=0.0))
        assert breakdown["closs"] > 0.0
        assert breakdown["closs_weighted"] == 0.0
        assert total.item() == pytest.approx(breakdown["l1"] + breakdown["perceptual"], abs=1e-15)

    def test_breakdown_sums_to_total(self, tiny_frozen):
        rng = np.random.default_rng(17)
        clean = Tensor(rng.uniform(0, 1, (1, 4, 16, 16)))
        noisy = Tensor(np.clip(clean.data + rng.normal(0, 0.1, clean.shape), 0, 1))
        out = Tensor(np.clip(clean.data + rng.normal(0, 0.05, clean.shape), 0, 1))
        for mode in ("closs", "l1_features"):
            total, bd = final_loss(out, clean, noisy, tiny_frozen,
                                   LossConfig(feature_loss_mode=mode))
            assert abs(total.item() - (bd["l1"] + bd["perceptual"] + bd["closs_weighted"])) < 1e-12

    def test_l1_features_mode_matches_direct(self, tiny_frozen):
        rng = np.random.default_rng(18)
        clean = Tensor(rng.uniform(0, 1, (1, 4, 16, 16)))
        noisy = Tensor(np.clip(clean.data + rng.normal(0, 0.1, clean.shape), 0, 1))
        out = Tensor(np.clip(clean.data + rng.normal(0, 0.05, clean.shape), 0, 1))
        _, bd = final_loss(out, clean, noisy, tiny_frozen, LossConfig(feature_loss_mode="l1_features"))
        direct = feature_l1(tiny_frozen.features(out), tiny_frozen.features(clean)).item()
        assert bd["closs"] == pytest.approx(direct, abs=1e-15)


class TestLossConfig:
    def test_default_layer_weights_match_published(self):
        assert LossConfig().layer_weights == (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

    def test_invalid_configs(self):
        with pytest.raises(ShapeError):
            LossConfig(layer_weights=(1, 2, 3))
        with pytest.raises(ShapeError):
            LossConfig(similarity_variant="cosine")
        with pytest.raises(ShapeError):
            LossConfig(alpha=-0.5)
        with pytest.raises(ShapeError):
            LossConfig(eps_ratio=0.0)
