"""Toy multi-frame burst denoiser: 5 noisy RAW frames in, 1 denoised frame out.

A single-stage U-shaped network: the frames are concatenated channelwise,
passed through a stem conv, ``depth`` stride-2 downsampling convs, a
bottleneck conv, then mirrored nearest-neighbor upsampling with skip
connections by channel concatenation. The head predicts a 4-channel
residual added to the center frame; with the head zero-initialized the
network is exactly the identity on the center frame. Output is clamped to
[0, 1] at inference only, never during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import RawImage, as_tensor
from .errors import ShapeError


@dataclass
class DenoiserConfig:
    in_frames: int = 5
    base_width: int = 32
    depth: int = 2
    leaky_slope: float = 0.1
    residual: bool = True

    def __post_init__(self):
        if self.in_frames < 1:
            raise ShapeError(f"in_frames must be >= 1, got {self.in_frames}")
        if self.depth < 1:
            raise ShapeError(f"depth must be >= 1, got {self.depth}")
        if self.base_width < 1:
            raise ShapeError(f"base_width must be >= 1, got {self.base_width}")

    @property
    def center_index(self) -> int:
        return self.in_frames // 2

    def level_widths(self):
        return [self.base_width * (2 ** l) for l in range(self.depth + 1)]


class DenoiserParams:
    """Conv weights/biases for stem, encoder, bottleneck, decoder, and head."""

    def __init__(self, stem, downs, mid, ups, head):
        self.stem = stem          # (w, b)
        self.downs = downs        # depth x (w, b)
        self.mid = mid
        self.ups = ups            # depth x (w, b), deepest first
        self.head = head

    def named_parameters(self):
        out = [("stem.w", self.stem[0]), ("stem.b", self.stem[1])]
        for i, (w, b) in enumerate(self.downs):
            out += [(f"down{i}.w", w), (f"down{i}.b", b)]
        out += [("mid.w", self.mid[0]), ("mid.b", self.mid[1])]
        for i, (w, b) in enumerate(self.ups):
            out += [(f"up{i}.w", w), (f"up{i}.b", b)]
        out += [("head.w", self.head[0]), ("head.b", self.head[1])]
        return out

    def copy(self) -> "DenoiserParams":
        def cp(pair):
            return (Tensor(pair[0].data.copy(), requires_grad=True),
                    Tensor(pair[1].data.copy(), requires_grad=True))
        return DenoiserParams(cp(self.stem), [cp(p) for p in self.downs],
                              cp(self.mid), [cp(p) for p in self.ups], cp(self.head))


def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    w = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)), requires_grad=True)
    b = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True)
    return (w, b)


def init_denoiser(config: DenoiserConfig, channels_per_frame: int = 4,
                  seed: int = 0) -> DenoiserParams:
    """Random init; the residual head starts at exactly zero."""
    rng = np.random.default_rng(seed)
    widths = config.level_widths()
    k = 3
    stem = _he_conv(rng, widths[0], config.in_frames * channels_per_frame, k)
    downs = [_he_conv(rng, widths[l + 1], widths[l], k) for l in range(config.depth)]
    mid = _he_conv(rng, widths[-1], widths[-1], k)
    ups = []
    for l in range(config.depth, 0, -1):
        ups.append(_he_conv(rng, widths[l - 1], widths[l] + widths[l - 1], k))
    head = (Tensor(np.zeros((channels_per_frame, widths[0], k, k)), requires_grad=True),
            Tensor(np.zeros((1, channels_per_frame, 1, 1)), requires_grad=True))
    return DenoiserParams(stem, downs, mid, ups, head)


def denoiser_forward(frames, params: DenoiserParams, config: DenoiserConfig,
                     clamp_output: bool = False) -> Tensor:
    """Graph-aware forward over a list of in_frames tensors of shape (N, C, H, W)."""
    frames = [as_tensor(f) for f in frames]
    if len(frames) != config.in_frames:
        raise ShapeError(f"expected {config.in_frames} frames, got {len(frames)}")
    shape = frames[0].shape
    for i, f in enumerate(frames[1:], start=1):
        if f.shape != shape:
            raise ShapeError(f"frame {i} shape {f.shape} != frame 0 shape {shape}")
    _, _, h, w = shape
    factor = 2 ** config.depth
    if h % factor or w % factor:
        raise ShapeError(f"spatial size {h}x{w} must be divisible by {factor} (depth {config.depth})")

    slope = config.leaky_slope
    x = ad.concat(frames, axis=1)
    skips = [ad.leaky_relu(ad.conv2d(x, *params.stem, stride=1, padding=1), slope)]
    for wgt, bias in params.downs:
        skips.append(ad.leaky_relu(ad.conv2d(skips[-1], wgt, bias, stride=2, padding=1), slope))
    hcur = ad.leaky_relu(ad.conv2d(skips[-1], *params.mid, stride=1, padding=1), slope)
    for i, (wgt, bias) in enumerate(params.ups):
        hcur = ad.upsample_nearest2x(hcur)
        hcur = ad.concat([hcur, skips[config.depth - 1 - i]], axis=1)
        hcur = ad.leaky_relu(ad.conv2d(hcur, wgt, bias, stride=1, padding=1), slope)
    out = ad.conv2d(hcur, *params.head, stride=1, padding=1)
    if config.residual:
        out = ad.add(out, frames[config.center_index])
    if clamp_output:
        out = ad.clamp(out, 0.0, 1.0)
    return out


def denoise_burst(frames, params: DenoiserParams, config: DenoiserConfig,
                  clamp_output: bool = True) -> RawImage:
    """Inference entry point: a burst of RawImages (or tensors) to one RawImage."""
    with ad.no_grad():
        out = denoiser_forward(frames, params, config, clamp_output=clamp_output)
    center = frames[config.center_index]
    source = center.source_id if isinstance(center, RawImage) else ""
    return RawImage(Tensor(out.data), source_id=f"{source}+denoised" if source else "denoised")


def denoise_frame_stream(frames, params: DenoiserParams, config: DenoiserConfig,
                         clamp_output: bool = True) -> list[RawImage]:
    """Sliding in_frames window with edge replication; one output per position."""
    frames = list(frames)
    if len(frames) < 1:
        raise ShapeError("denoise_frame_stream: need at least one frame")
    k = config.in_frames
    before = k // 2
    outputs = []
    for t in range(len(frames)):
        window = [frames[min(max(t - before + j, 0), len(frames) - 1)] for j in range(k)]
        outputs.append(denoise_burst(window, params, config, clamp_output=clamp_output))
    return outputs
