"""Wnet: the task-related feature embedding network.

Front end: the Haar high-frequency bands (HL, LH, HH) of the packed RAW
input, stacked along channels. Trunk: five 3x3 conv stages with leaky
ReLU, stride 2 on stages 2 and 4, a feature tap after each activation.
Head: global average pooling and a linear layer to two logits for the
clean-vs-noisy pretraining task.

Because the LL band is discarded, any constant image produces exactly zero
input to the trunk, so taps and logits are invariant across constant
images. The shallow design keeps the embedding focused on local
high-frequency structure (the signature of sensor noise) rather than
semantics; pretraining is plain binary classification against
synthesized noisy counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import as_tensor
from .errors import DataError, NumericalError, ShapeError
from .noise import NoiseParams, synthesize_noise
from .seeds import derive_seed, make_rng
from .trainer import Adam, checkpoint_load, checkpoint_save

STAGE_STRIDES = (1, 2, 1, 2, 1)
MIN_SPATIAL = 8  # one Haar level + two stride-2 stages


@dataclass
class WnetConfig:
    input_channels: int = 4
    stage_widths: tuple = (16, 32, 64, 64, 64)
    kernel_size: int = 3
    leaky_slope: float = 0.1

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if len(self.stage_widths) != 5:
            raise ShapeError(f"stage_widths must have exactly 5 entries, got {len(self.stage_widths)}")
        if any(w < 1 for w in self.stage_widths):
            raise ShapeError(f"stage_widths must all be >= 1, got {self.stage_widths}")
        if self.kernel_size % 2 != 1:
            raise ShapeError(f"kernel_size must be odd, got {self.kernel_size}")


class FeaturePyramid:
    """The five tap tensors, shallowest first; spatial extents never grow."""

    def __init__(self, features):
        features = list(features)
        if len(features) != 5:
            raise ShapeError(f"feature pyramid must have 5 layers, got {len(features)}")
        for i in range(1, 5):
            if (features[i].shape[2] > features[i - 1].shape[2]
                    or features[i].shape[3] > features[i - 1].shape[3]):
                raise ShapeError("feature pyramid spatial extents must be non-increasing")
        self.features = features

    def __len__(self):
        return 5

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i):
        return self.features[i]


class WnetParams:
    def __init__(self, stage_weights, stage_biases, head_weight, head_bias):
        self.stage_weights = stage_weights
        self.stage_biases = stage_biases
        self.head_weight = head_weight
        self.head_bias = head_bias

    def named_parameters(self):
        out = []
        for i in range(5):
            out.append((f"stage{i + 1}.w", self.stage_weights[i]))
            out.append((f"stage{i + 1}.b", self.stage_biases[i]))
        out.append(("head.w", self.head_weight))
        out.append(("head.b", self.head_bias))
        return out

    def copy(self, requires_grad=True) -> "WnetParams":
        def cp(t):
            return Tensor(t.data.copy(), requires_grad=requires_grad)
        return WnetParams([cp(w) for w in self.stage_weights],
                          [cp(b) for b in self.stage_biases],
                          cp(self.head_weight), cp(self.head_bias))

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for _, p in self.named_parameters())


def init_wnet(config: WnetConfig, seed: int = 0) -> WnetParams:
    rng = np.random.default_rng(seed)
    k = config.kernel_size
    weights = []
    biases = []
    cin = 3 * config.input_channels
    for width in config.stage_widths:
        std = np.sqrt(2.0 / (cin * k * k))
        weights.append(Tensor(rng.normal(0.0, std, size=(width, cin, k, k)), requires_grad=True))
        biases.append(Tensor(np.zeros((1, width, 1, 1)), requires_grad=True))
        cin = width
    d = config.stage_widths[-1]
    # zero head: logits start at 0, so early accuracy reflects only the
    # learned separation direction (important at the small pretraining lr)
    head_w = Tensor(np.zeros((2, d, 1, 1)), requires_grad=True)
    head_b = Tensor(np.zeros((1, 2, 1, 1)), requires_grad=True)
    return WnetParams(weights, biases, head_w, head_b)


def wnet_forward(image, params: WnetParams, config: WnetConfig):
    """Returns (FeaturePyramid of the 5 post-activation taps, logits (N,2,1,1))."""
    from .wavelet import highfreq_stack

    x = as_tensor(image)
    n, c, h, w = x.shape
    if c != config.input_channels:
        raise ShapeError(f"wnet: input has {c} channels, config expects {config.input_channels}")
    if h % 2 or w % 2 or h < MIN_SPATIAL or w < MIN_SPATIAL:
        raise ShapeError(
            f"wnet: spatial size {h}x{w} must be even and at least "
            f"{MIN_SPATIAL}x{MIN_SPATIAL} for the two stride-2 stages"
        )
    pad = config.kernel_size // 2
    cur = highfreq_stack(x)
    taps = []
    for i in range(5):
        cur = ad.conv2d(cur, params.stage_weights[i], params.stage_biases[i],
                        stride=STAGE_STRIDES[i], padding=pad)
        cur = ad.leaky_relu(cur, config.leaky_slope)
        taps.append(cur)
    pooled = ad.reduce_mean(taps[-1], axes=(2, 3))
    logits = ad.linear(pooled, params.head_weight, params.head_bias)
    return FeaturePyramid(taps), logits


class FrozenWnet:
    """Embedding handle with gradients disabled on the network parameters.

    Feature gradients still flow to the *images*, which is what the
    contrastive regularizer needs.
    """

    def __init__(self, params: WnetParams, config: WnetConfig):
        self.params = params.copy(requires_grad=False)
        self.config = config

    def forward(self, image):
        return wnet_forward(image, self.params, self.config)

    def features(self, image):
        return list(self.forward(image)[0])


def freeze(params: WnetParams, config: WnetConfig) -> FrozenWnet:
    if not params.all_finite():
        raise NumericalError("freeze: network parameters contain non-finite values")
    return FrozenWnet(params, config)


# ---------------------------------------------------------------------------
# Pretraining (clean = 0 vs noisy = 1 classification)
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    params: WnetParams        # parameters of the best validation epoch
    best_epoch: int
    best_accuracy: float
    val_accuracies: list
    train_losses: list        # mean training loss per epoch


def _accuracy(params, config, arrays, labels, batch_size=16) -> float:
    correct = 0
    with ad.no_grad():
        for start in range(0, len(arrays), batch_size):
            chunk = arrays[start : start + batch_size]
            logits = wnet_forward(Tensor(np.concatenate(chunk, axis=0)), params, config)[1]
            pred = logits.data.reshape(len(chunk), 2).argmax(axis=1)
            correct += int((pred == labels[start : start + batch_size]).sum())
    return correct / len(arrays)


def wnet_pretrain(clean_patches, noise_params: NoiseParams, config: WnetConfig,
                  epochs: int, lr: float = 1e-4, batch_size: int = 8,
                  val_fraction: float = 0.2, seed: int = 0,
                  fresh_noise: bool = True) -> PretrainResult:
    """Train clean-vs-noisy classification; returns the best-validation params.

    Each epoch synthesizes fresh noisy counterparts of the training patches
    (set fresh_noise=False to reuse the epoch-0 draws). Validation noisy
    samples use fixed per-patch seeds so the accuracy curve is comparable
    across epochs. The train/validation split is disjoint by patch.
    """
    patches = [as_tensor(p).data for p in clean_patches]
    if not patches:
        raise DataError("wnet_pretrain: empty dataset")
    if len(patches) < 2:
        raise DataError("wnet_pretrain: need at least 2 patches for a disjoint split")
    order = make_rng(seed, "split").permutation(len(patches))
    n_val = min(max(1, int(round(len(patches) * val_fraction))), len(patches) - 1)
    val_idx = list(order[:n_val])
    train_idx = list(order[n_val:])

    params = init_wnet(config, seed=derive_seed(seed, "init"))
    adam = Adam(params.named_parameters(), lr=lr)

    val_arrays = []
    val_labels = []
    for i in val_idx:
        noisy = synthesize_noise(Tensor(patches[i]),
                                 noise_params.with_seed(derive_seed(seed, "val-noise", i)))
        val_arrays.extend([patches[i], noisy.array])
        val_labels.extend([0, 1])
    val_labels = np.asarray(val_labels)

    best = (-1.0, 0, None)
    val_accuracies = []
    train_losses = []
    for epoch in range(epochs):
        noise_epoch = epoch if fresh_noise else 0
        samples = []
        for i in train_idx:
            noisy = synthesize_noise(
                Tensor(patches[i]),
                noise_params.with_seed(derive_seed(seed, "aug", noise_epoch, i)))
            samples.append((patches[i], 0))
            samples.append((noisy.array, 1))
        perm = make_rng(seed, "epoch-order", epoch).permutation(len(samples))

        loss_sum = 0.0
        for start in range(0, len(perm), batch_size):
            chosen = [samples[j] for j in perm[start : start + batch_size]]
            batch = Tensor(np.concatenate([s[0] for s in chosen], axis=0))
            labels = np.asarray([s[1] for s in chosen])
            ad.reset_graph()
            logits = wnet_forward(batch, params, config)[1]
            loss = ad.softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"wnet_pretrain: non-finite loss at epoch {epoch}, sample {start}"
                )
            loss.backward()
            adam.step()
            adam.zero_grad()
            ad.reset_graph()
            loss_sum += value * len(chosen)
        train_losses.append(loss_sum / len(samples))

        acc = _accuracy(params, config, val_arrays, val_labels)
        val_accuracies.append(acc)
        if acc > best[0]:
            best = (acc, epoch, params.copy())

    return PretrainResult(best[2], best[1], best[0], val_accuracies, train_losses)


# ---------------------------------------------------------------------------
# Checkpoint glue
# ---------------------------------------------------------------------------


def save_wnet_checkpoint(ckpt_dir, params: WnetParams, config: WnetConfig,
                         epoch: int = 0, val_accuracy: float = float("nan")):
    meta = {
        "kind": "wnet",
        "input_channels": config.input_channels,
        "stage_widths": ",".join(str(w) for w in config.stage_widths),
        "kernel_size": config.kernel_size,
        "leaky_slope": config.leaky_slope,
        "epoch": epoch,
        "val_accuracy": val_accuracy,
    }
    arrays = {name: p.data for name, p in params.named_parameters()}
    checkpoint_save(ckpt_dir, arrays, meta)


def load_wnet_checkpoint(ckpt_dir):
    """Returns (params, config, meta)."""
    arrays, meta = checkpoint_load(ckpt_dir)
    config = WnetConfig(
        input_channels=int(meta["input_channels"]),
        stage_widths=tuple(int(w) for w in meta["stage_widths"].split(",")),
        kernel_size=int(meta["kernel_size"]),
        leaky_slope=float(meta["leaky_slope"]),
    )
    params = init_wnet(config, seed=0)
    for name, p in params.named_parameters():
        if name not in arrays:
            raise DataError(f"wnet checkpoint is missing parameter {name!r}")
        if arrays[name].shape != p.shape:
            raise DataError(
                f"wnet checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {p.shape}"
            )
        p.data = arrays[name].copy()
    return params, config, meta
