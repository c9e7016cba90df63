"""Similarity, contrastive feature loss, perceptual term, and the training objective.

The feature similarity combines pixel-wise cosine with a channel-averaged
L1 term. For feature maps fx, fy of shape C x H x W (batched as N x C x H x W):

    s(fx, fy) = 1/(2HW) * sum_hw [ cos_term(h, w) + 2/C * sum_c |fx - fy| ]

where cos_term is the cosine of the two C-vectors at pixel (h, w) in the
"literal" variant and (1 - cosine) in the default "distance" variant. The
cosine is evaluated as 1 - ||u - v||^2 / 2 on eps-guarded unit vectors,
which makes self-pairs exact: s(x, x) is exactly 0 (distance) and exactly
1/2 (literal, nonzero pixels). Pixels where either vector's norm falls
below eps_cos contribute 0 to the cosine part; if exactly one side is
degenerate the distance variant contributes 1 there.

The contrastive loss compares a denoised anchor pyramid f against a clean
positive pyramid p and a noisy negative pyramid n, layer by layer:

    mean over batch of  sum_i  w_i * s(p_i, f_i) / (s(n_i, f_i) + eps_ratio)

Minimizing the distance variant pulls the anchor toward the clean features
and pushes it away from the noisy ones. The literal (+cosine) form is kept
behind the variant switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import as_tensor
from .errors import ShapeError

DEFAULT_LAYER_WEIGHTS = (1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0)

SIMILARITY_VARIANTS = ("distance", "literal")
FEATURE_LOSS_MODES = ("closs", "l1_features")


@dataclass
class LossConfig:
    alpha: float = 0.1
    layer_weights: tuple = DEFAULT_LAYER_WEIGHTS
    similarity_variant: str = "distance"
    eps_cos: float = 1e-12
    eps_ratio: float = 1e-7
    feature_loss_mode: str = "closs"

    def __post_init__(self):
        self.layer_weights = tuple(float(w) for w in self.layer_weights)
        if len(self.layer_weights) != 5 or any(w <= 0 for w in self.layer_weights):
            raise ShapeError(f"layer_weights must be 5 positive values, got {self.layer_weights}")
        if self.alpha < 0:
            raise ShapeError(f"alpha must be >= 0, got {self.alpha}")
        if self.similarity_variant not in SIMILARITY_VARIANTS:
            raise ShapeError(f"similarity_variant must be one of {SIMILARITY_VARIANTS}")
        if self.feature_loss_mode not in FEATURE_LOSS_MODES:
            raise ShapeError(f"feature_loss_mode must be one of {FEATURE_LOSS_MODES}")
        if self.eps_cos <= 0 or self.eps_ratio <= 0:
            raise ShapeError("eps_cos and eps_ratio must be positive")


def pixel_similarity(fx: Tensor, fy: Tensor, variant: str = "distance",
                     eps_cos: float = 1e-12) -> Tensor:
    """Per-sample feature similarity; returns an N x 1 x 1 x 1 tensor."""
    if variant not in SIMILARITY_VARIANTS:
        raise ShapeError(f"unknown similarity variant {variant!r}")
    if fx.shape != fy.shape:
        raise ShapeError(f"pixel_similarity: shapes {fx.shape} and {fy.shape} differ")
    _, c, h, w = fx.shape

    nx = ad.sqrt(ad.reduce_sum(ad.square(fx), axes=(1,)))
    ny = ad.sqrt(ad.reduce_sum(ad.square(fy), axes=(1,)))
    ok_x = nx.data >= eps_cos
    ok_y = ny.data >= eps_cos
    both = ok_x & ok_y

    ux = ad.div(fx, ad.where_mask(ok_x, nx, 1.0))
    uy = ad.div(fy, ad.where_mask(ok_y, ny, 1.0))
    half_sq_dist = ad.scalar_mul(ad.reduce_sum(ad.square(ad.sub(ux, uy)), axes=(1,)), 0.5)

    if variant == "literal":
        # cosine = 1 - ||u - v||^2 / 2; degenerate pixels contribute 0
        cos_part = ad.where_mask(both, ad.scalar_add(ad.scalar_mul(half_sq_dist, -1.0), 1.0), 0.0)
    else:
        # 1 - cosine; a pixel degenerate on exactly one side contributes 1,
        # degenerate on both sides contributes 0 (so s(x, x) = 0 for any x)
        one_sided = (ok_x ^ ok_y).astype(np.float64)
        cos_part = ad.add(ad.where_mask(both, half_sq_dist, 0.0), ad.constant(one_sided))

    l1_part = ad.scalar_mul(
        ad.scalar_div(ad.reduce_sum(ad.absolute(ad.sub(fx, fy)), axes=(1,)), float(c)), 2.0
    )
    bracket = ad.add(cos_part, l1_part)
    return ad.scalar_div(ad.reduce_sum(bracket, axes=(2, 3)), float(2 * h * w))


def _check_pyramid(name, pyr):
    feats = list(pyr)
    if len(feats) != 5:
        raise ShapeError(f"{name} pyramid must have exactly 5 layers, got {len(feats)}")
    return feats


def closs(denoised_pyramid, clean_pyramid, noisy_pyramid, config: LossConfig) -> Tensor:
    """Weighted sum over layers of positive/negative similarity ratios, batch mean."""
    f = _check_pyramid("denoised", denoised_pyramid)
    p = _check_pyramid("clean", clean_pyramid)
    n = _check_pyramid("noisy", noisy_pyramid)
    acc = None
    for i in range(5):
        if not (f[i].shape == p[i].shape == n[i].shape):
            raise ShapeError(
                f"closs: layer {i + 1} shapes differ: {f[i].shape} / {p[i].shape} / {n[i].shape}"
            )
        s_pos = pixel_similarity(p[i], f[i], config.similarity_variant, config.eps_cos)
        s_neg = pixel_similarity(n[i], f[i], config.similarity_variant, config.eps_cos)
        ratio = ad.div(s_pos, ad.scalar_add(s_neg, config.eps_ratio))
        term = ad.scalar_mul(ratio, config.layer_weights[i])
        acc = term if acc is None else ad.add(acc, term)
    return ad.reduce_mean(acc, axes=(0,))


def feature_l1(denoised_pyramid, clean_pyramid, layer_weights=DEFAULT_LAYER_WEIGHTS) -> Tensor:
    """Plain weighted L1 between anchor and positive features (ablation mode)."""
    f = _check_pyramid("denoised", denoised_pyramid)
    p = _check_pyramid("clean", clean_pyramid)
    acc = None
    for i in range(5):
        if f[i].shape != p[i].shape:
            raise ShapeError(f"feature_l1: layer {i + 1} shapes differ: {f[i].shape} / {p[i].shape}")
        term = ad.scalar_mul(ad.reduce_mean(ad.absolute(ad.sub(f[i], p[i]))), layer_weights[i])
        acc = term if acc is None else ad.add(acc, term)
    return acc


def perceptual_distance(denoised, clean, frozen_wnet) -> Tensor:
    """Mean squared difference of the deepest embedding taps.

    Stands in for an external learned perceptual metric, which would need a
    pretrained third-party network; the frozen embedding net fills that
    role here and keeps the whole pipeline in the 4-channel RAW domain.
    """
    d = as_tensor(denoised)
    c = as_tensor(clean)
    if d.shape != c.shape:
        raise ShapeError(f"perceptual_distance: shapes {d.shape} and {c.shape} differ")
    tap_d = frozen_wnet.features(d)[4]
    tap_c = frozen_wnet.features(c)[4]
    return ad.reduce_mean(ad.square(ad.sub(tap_d, tap_c)))


def final_loss(denoised, clean, noisy_center, frozen_wnet, config: LossConfig):
    """L1 + perceptual + alpha * feature term; returns (total, breakdown).

    The breakdown dict reports each term unweighted plus the weighted
    feature contribution that actually enters the total:
    total = l1 + perceptual + closs_weighted (exact bookkeeping).
    """
    d = as_tensor(denoised)
    c = as_tensor(clean)
    n = as_tensor(noisy_center)
    if not (d.shape == c.shape == n.shape):
        raise ShapeError(
            f"final_loss: shapes differ: denoised {d.shape} / clean {c.shape} / noisy {n.shape}"
        )
    l1 = ad.reduce_mean(ad.absolute(ad.sub(d, c)))

    pyr_d = frozen_wnet.features(d)
    pyr_c = frozen_wnet.features(c)
    perceptual = ad.reduce_mean(ad.square(ad.sub(pyr_d[4], pyr_c[4])))

    if config.feature_loss_mode == "closs":
        pyr_n = frozen_wnet.features(n)
        feature_term = closs(pyr_d, pyr_c, pyr_n, config)
    else:
        feature_term = feature_l1(pyr_d, pyr_c, config.layer_weights)

    weighted = ad.scalar_mul(feature_term, config.alpha)
    total = ad.add(ad.add(l1, perceptual), weighted)
    breakdown = {
        "l1": l1.item(),
        "perceptual": perceptual.item(),
        "closs": feature_term.item(),
        "closs_weighted": weighted.item(),
    }
    return total, breakdown
