"""Finite-difference verification suite over every differentiable operation.

Each entry builds random instances of one op (or one composite, up to the
full training objective) and compares analytic gradients against central
differences via ``autodiff.gradcheck``. Instances for ops with kinks
(abs, leaky_relu, clamp) are sampled away from the non-smooth points.
Composite entries check a random subset of coordinates per instance to
keep the suite fast; the unit tests additionally run exhaustive instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck
from .denoiser import DenoiserConfig, denoiser_forward, init_denoiser
from .losses import LossConfig, closs, final_loss, pixel_similarity
from .seeds import make_rng
from .wavelet import haar_dwt2d, haar_idwt2d, highfreq_stack
from .wnet import FrozenWnet, WnetConfig, init_wnet, wnet_forward

TINY_WNET = WnetConfig(stage_widths=(2, 2, 2, 2, 2))
TINY_DENOISER = DenoiserConfig(base_width=2, depth=1)


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _t_nonsmooth_safe(rng, shape, margin=0.05):
    """Values with |x| >= margin, for ops with a kink at zero."""
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


# --- builders: each returns (f, inputs) ------------------------------------


def _build_conv2d(rng):
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    x = _t(rng, (1, 2, 6, 6))
    w = _t(rng, (3, 2, 3, 3))
    b = _t(rng, (1, 3, 1, 1))
    return (lambda x, w, b: ad.reduce_sum(ad.conv2d(x, w, b, stride=stride, padding=padding)),
            [x, w, b])


def _build_linear(rng):
    x = _t(rng, (2, 3, 2, 2))
    w = _t(rng, (4, 12, 1, 1))
    b = _t(rng, (1, 4, 1, 1))
    return (lambda x, w, b: ad.reduce_sum(ad.square(ad.linear(x, w, b))), [x, w, b])


def _build_softmax_ce(rng):
    logits = Tensor(rng.normal(0.0, 2.0, size=(4, 2, 1, 1)), requires_grad=True)
    labels = rng.integers(0, 2, size=4)
    return (lambda t: ad.softmax_cross_entropy(t, labels), [logits])


def _build_leaky_relu(rng):
    slope = float(rng.uniform(0.0, 0.5))
    x = _t_nonsmooth_safe(rng, (1, 3, 4, 4))
    return (lambda t: ad.reduce_sum(ad.square(ad.leaky_relu(t, slope))), [x])


def _build_abs(rng):
    x = _t_nonsmooth_safe(rng, (1, 2, 4, 4))
    return (lambda t: ad.reduce_sum(ad.mul(ad.absolute(t), t)), [x])


def _build_add_sub(rng):
    a = _t(rng, (2, 3, 4, 4))
    b = _t(rng, (1, 3, 4, 4))  # batch broadcast
    return (lambda a, b: ad.reduce_sum(ad.square(ad.add(ad.sub(a, b), b))), [a, b])


def _build_mul_div(rng):
    a = _t(rng, (1, 3, 4, 4))
    mag = rng.uniform(0.2, 1.5, size=(1, 1, 4, 4))
    sign = np.where(rng.uniform(size=(1, 1, 4, 4)) < 0.5, -1.0, 1.0)
    b = Tensor(mag * sign, requires_grad=True)  # channel broadcast, away from 0
    return (lambda a, b: ad.reduce_sum(ad.div(ad.mul(a, a), b)), [a, b])


def _build_scalar_ops(rng):
    c = float(rng.uniform(0.5, 2.0))
    x = _t(rng, (1, 2, 3, 3))
    return (lambda t: ad.reduce_sum(ad.scalar_div(ad.scalar_add(ad.scalar_mul(t, c), 0.7), 1.3)),
            [x])


def _build_square_sqrt(rng):
    x = _t(rng, (1, 2, 4, 4), lo=0.1, hi=2.0)
    return (lambda t: ad.reduce_sum(ad.sqrt(ad.scalar_add(ad.square(t), 0.1))), [x])


def _build_clamp(rng):
    vals = rng.uniform(-1.0, 2.0, size=(1, 2, 4, 4))
    # keep every value at least 1e-2 away from the clamp bounds
    for bound in (0.0, 1.0):
        near = np.abs(vals - bound) < 1e-2
        vals = np.where(near, vals + 0.05, vals)
    x = Tensor(vals, requires_grad=True)
    return (lambda t: ad.reduce_sum(ad.square(ad.clamp(t, 0.0, 1.0))), [x])


def _build_where_mask(rng):
    x = _t(rng, (1, 2, 4, 4))
    mask = rng.uniform(size=(1, 2, 4, 4)) < 0.6
    return (lambda t: ad.reduce_sum(ad.square(ad.where_mask(mask, t, 0.3))), [x])


def _build_reductions(rng):
    x = _t(rng, (2, 3, 4, 4))
    return (lambda t: ad.reduce_sum(ad.square(ad.reduce_mean(t, axes=(2, 3)))), [x])


def _build_concat_upsample(rng):
    a = _t(rng, (1, 2, 4, 4))
    b = _t(rng, (1, 3, 4, 4))
    return (lambda a, b: ad.reduce_sum(ad.square(ad.upsample_nearest2x(ad.concat([a, b], axis=1)))),
            [a, b])


def _build_haar_dwt(rng):
    x = _t(rng, (1, 2, 8, 8))

    def f(t):
        bands = haar_dwt2d(t)
        acc = None
        for band in bands.as_tuple():
            term = ad.reduce_mean(ad.square(band))
            acc = term if acc is None else ad.add(acc, term)
        return acc

    return (f, [x])


def _build_haar_idwt(rng):
    bands = [_t(rng, (1, 2, 4, 4)) for _ in range(4)]

    def f(ll, hl, lh, hh):
        from .wavelet import WaveletBands
        return ad.reduce_mean(ad.square(haar_idwt2d(WaveletBands(ll, hl, lh, hh))))

    return (f, bands)


def _build_highfreq(rng):
    x = _t(rng, (1, 3, 8, 8))
    return (lambda t: ad.reduce_mean(ad.square(highfreq_stack(t))), [x])


def _build_pixel_similarity(rng):
    variant = "distance" if rng.uniform() < 0.5 else "literal"
    fx = Tensor(rng.normal(size=(1, 4, 6, 6)), requires_grad=True)
    fy = Tensor(rng.normal(size=(1, 4, 6, 6)), requires_grad=True)
    return (lambda a, b: ad.reduce_sum(pixel_similarity(a, b, variant)), [fx, fy])


def _build_closs(rng):
    config = LossConfig(similarity_variant="distance" if rng.uniform() < 0.5 else "literal")
    pyramids = [[Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=True) for _ in range(5)]
                for _ in range(3)]

    def f(*tensors):
        return closs(tensors[0:5], tensors[5:10], tensors[10:15], config)

    return (f, [t for pyr in pyramids for t in pyr])


def _build_wnet_taps(rng):
    config = TINY_WNET
    params = init_wnet(config, seed=int(rng.integers(0, 2 ** 31)))
    image = Tensor(rng.uniform(0.0, 1.0, size=(1, 4, 8, 8)), requires_grad=True)
    inputs = [image] + [p for _, p in params.named_parameters()]

    def f(*_):
        pyr, logits = wnet_forward(image, params, config)
        acc = ad.reduce_sum(ad.square(logits))
        for tap in pyr:
            acc = ad.add(acc, ad.reduce_sum(ad.square(tap)))
        return acc

    return (f, inputs)


def _build_denoiser_l1(rng):
    config = TINY_DENOISER
    params = init_denoiser(config, seed=int(rng.integers(0, 2 ** 31)))
    # head starts at zero; give it nonzero values so its gradient is generic
    params.head[0].data = rng.normal(0.0, 0.1, size=params.head[0].shape)
    params.head[1].data = rng.normal(0.0, 0.1, size=params.head[1].shape)
    frames = [Tensor(rng.uniform(0.0, 1.0, size=(1, 4, 16, 16))) for _ in range(5)]
    clean = Tensor(rng.uniform(0.0, 1.0, size=(1, 4, 16, 16)))
    inputs = [p for _, p in params.named_parameters()]

    def f(*_):
        out = denoiser_forward(frames, params, config, clamp_output=False)
        return ad.reduce_mean(ad.absolute(ad.sub(out, clean)))

    return (f, inputs)


def build_objective_instance(rng, image_size=8):
    """The full training objective on a toy burst, wrt every denoiser parameter."""
    wcfg = TINY_WNET
    wparams = init_wnet(wcfg, seed=int(rng.integers(0, 2 ** 31)))
    frozen = FrozenWnet(wparams, wcfg)
    dcfg = TINY_DENOISER
    dparams = init_denoiser(dcfg, seed=int(rng.integers(0, 2 ** 31)))
    dparams.head[0].data = rng.normal(0.0, 0.05, size=dparams.head[0].shape)
    dparams.head[1].data = rng.normal(0.0, 0.05, size=dparams.head[1].shape)
    loss_config = LossConfig()
    clean = Tensor(rng.uniform(0.1, 0.9, size=(1, 4, image_size, image_size)))
    frames = [Tensor(np.clip(clean.data + rng.normal(0.0, 0.05, size=clean.shape), 0.0, 1.0))
              for _ in range(5)]
    inputs = [p for _, p in dparams.named_parameters()]

    def f(*_):
        out = denoiser_forward(frames, dparams, dcfg, clamp_output=False)
        return final_loss(out, clean, frames[2], frozen, loss_config)[0]

    return (f, inputs)


@dataclass
class SuiteEntry:
    name: str
    build: callable
    tol: float = 1e-4
    max_coords: int = None  # None = exhaustive


SUITE = [
    SuiteEntry("conv2d", _build_conv2d),
    SuiteEntry("linear", _build_linear),
    SuiteEntry("softmax_cross_entropy", _build_softmax_ce),
    SuiteEntry("leaky_relu", _build_leaky_relu),
    SuiteEntry("abs", _build_abs),
    SuiteEntry("add/sub(broadcast)", _build_add_sub),
    SuiteEntry("mul/div(broadcast)", _build_mul_div),
    SuiteEntry("scalar ops", _build_scalar_ops),
    SuiteEntry("square/sqrt", _build_square_sqrt),
    SuiteEntry("clamp", _build_clamp),
    SuiteEntry("where_mask", _build_where_mask),
    SuiteEntry("sum/mean", _build_reductions),
    SuiteEntry("concat/upsample", _build_concat_upsample),
    SuiteEntry("haar_dwt", _build_haar_dwt, tol=1e-6),
    SuiteEntry("haar_idwt", _build_haar_idwt, tol=1e-6),
    SuiteEntry("highfreq_stack", _build_highfreq, tol=1e-6),
    SuiteEntry("pixel_similarity", _build_pixel_similarity),
    SuiteEntry("closs", _build_closs, max_coords=12),
    SuiteEntry("wnet_taps", _build_wnet_taps, max_coords=16),
    SuiteEntry("denoiser_l1", _build_denoiser_l1, max_coords=16),
    SuiteEntry("full_objective", build_objective_instance, max_coords=12),
]


@dataclass
class SuiteResult:
    name: str
    instances: int
    coords_checked: int
    max_rel_error: float
    tolerance: float
    passed: bool


def run_gradient_suite(instances=100, seed=0, step=1e-5, entries=None, verbose=False):
    """Run every suite entry over ``instances`` random instances each."""
    results = []
    for entry in entries or SUITE:
        worst = 0.0
        coords = 0
        ok = True
        for k in range(instances):
            rng = make_rng(seed, entry.name, k)
            f, inputs = entry.build(rng)
            report = gradcheck(f, inputs, step=step, tol=entry.tol,
                               max_coords=entry.max_coords, rng=rng)
            worst = max(worst, report.max_rel_error)
            coords += report.checked
            ok = ok and report.passed
        results.append(SuiteResult(entry.name, instances, coords, worst, entry.tol, ok))
        if verbose:
            state = "PASS" if ok else "FAIL"
            print(f"  {entry.name:<24} {state}  max rel err {worst:.3e} "
                  f"(tol {entry.tol:.0e}, {coords} coords)")
    return results
