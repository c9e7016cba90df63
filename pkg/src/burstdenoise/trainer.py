"""Adam optimization, checkpointing, and the denoiser training loop.

Every random draw is keyed by (base seed, purpose, step, ...) through
``seeds.derive_seed`` instead of consuming generator state sequentially,
so a run is a pure function of (seed, config, dataset) and resuming from a
checkpoint at step k reproduces the uninterrupted run bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import as_tensor, read_ten, write_ten
from .denoiser import DenoiserConfig, DenoiserParams, denoise_burst, denoiser_forward, init_denoiser
from .errors import DataError, NumericalError
from .losses import LossConfig, final_loss
from .metrics import psnr
from .noise import NoiseParams, make_burst
from .seeds import derive_seed, make_rng

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Standard bias-corrected Adam over named parameter tensors.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        if not self.params:
            raise NumericalError("adam: no parameters to optimize")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                raise NumericalError(f"adam: missing gradient for parameter {name!r}")
            if not np.isfinite(g).all():
                raise NumericalError(f"adam: non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def clip_global_norm(named_params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_save(ckpt_dir, named_arrays: dict, meta: dict):
    """Write one .ten file per array plus a manifest with byte counts."""
    os.makedirs(ckpt_dir, exist_ok=True)
    lines = [f"format_version={CHECKPOINT_VERSION}"]
    for key in sorted(meta):
        lines.append(f"meta.{key}={meta[key]}")
    for name in sorted(named_arrays):
        arr = np.asarray(named_arrays[name], dtype=np.float64)
        fname = name.replace("/", "_") + ".ten"
        write_ten(os.path.join(ckpt_dir, fname), arr)
        nbytes = os.path.getsize(os.path.join(ckpt_dir, fname))
        lines.append(f"tensor {name} {fname} {nbytes}")
    with open(os.path.join(ckpt_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def checkpoint_load(ckpt_dir):
    """Read back (named arrays, meta dict); validates version and byte counts."""
    manifest = os.path.join(ckpt_dir, "manifest.txt")
    if not os.path.exists(manifest):
        raise DataError(f"checkpoint manifest not found: {manifest}")
    arrays = {}
    meta = {}
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("format_version="):
                version = line.split("=", 1)[1]
                if version != str(CHECKPOINT_VERSION):
                    raise DataError(
                        f"{manifest}: checkpoint format version {version} is not "
                        f"supported (expected {CHECKPOINT_VERSION})"
                    )
            elif line.startswith("meta."):
                key, value = line[len("meta."):].split("=", 1)
                meta[key] = value
            elif line.startswith("tensor "):
                _, name, fname, nbytes = line.split(" ")
                path = os.path.join(ckpt_dir, fname)
                if not os.path.exists(path):
                    raise DataError(f"checkpoint tensor file missing: {path}")
                actual = os.path.getsize(path)
                if actual != int(nbytes):
                    raise DataError(
                        f"{path}: file is {actual} bytes, manifest expects {nbytes}"
                    )
                arrays[name] = read_ten(path)
            else:
                raise DataError(f"{manifest}: unparseable line {line!r}")
    return arrays, meta


def denoiser_state_arrays(params: DenoiserParams, adam: Adam = None) -> dict:
    arrays = {name: p.data for name, p in params.named_parameters()}
    if adam is not None:
        for name in adam.m:
            arrays[f"adam.m.{name}"] = adam.m[name]
            arrays[f"adam.v.{name}"] = adam.v[name]
    return arrays


def restore_denoiser(arrays: dict, meta: dict):
    """Rebuild (config, params, adam-or-None, step) from checkpoint contents."""
    config = DenoiserConfig(
        in_frames=int(meta["in_frames"]),
        base_width=int(meta["base_width"]),
        depth=int(meta["depth"]),
        leaky_slope=float(meta["leaky_slope"]),
        residual=meta["residual"] in ("True", "true", "1"),
    )
    params = init_denoiser(config, seed=0)
    for name, p in params.named_parameters():
        if name not in arrays:
            raise DataError(f"checkpoint is missing parameter {name!r}")
        if arrays[name].shape != p.shape:
            raise DataError(
                f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {p.shape}"
            )
        p.data = arrays[name].copy()
    adam = None
    if any(k.startswith("adam.m.") for k in arrays):
        adam = Adam(params.named_parameters(), lr=float(meta.get("lr", 1e-4)))
        adam.t = int(meta.get("adam_t", 0))
        for name, _ in params.named_parameters():
            adam.m[name] = arrays[f"adam.m.{name}"].copy()
            adam.v[name] = arrays[f"adam.v.{name}"].copy()
    step = int(meta.get("step", 0))
    return config, params, adam, step


# ---------------------------------------------------------------------------
# Denoiser training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    clip_norm: float = 10.0          # 0 disables gradient clipping
    checkpoint_interval: int = 0     # 0 = only the final checkpoint
    checkpoint_dir: str = ""
    val_interval: int = 0            # 0 = validate only at the end
    burst_size: int = 5

    def __post_init__(self):
        if self.lr <= 0:
            raise NumericalError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.steps < 1:
            raise NumericalError("batch_size and steps must be >= 1")


@dataclass
class BurstDataset:
    """Clean frames plus the noise recipe; bursts are synthesized on the fly."""

    train_clean: list
    val_clean: list
    noise: NoiseParams

    def __post_init__(self):
        if not self.train_clean:
            raise DataError("training set is empty")


@dataclass
class TrainResult:
    params: DenoiserParams
    adam: Adam
    log: list                 # dict rows: step,total,l1,perceptual,closs,psnr_val
    val_psnr: float           # mean denoised PSNR on the validation set
    val_noisy_psnr: float     # mean PSNR of the noisy center frames


def _train_index(seed: int, n: int, position: int) -> int:
    epoch, offset = divmod(position, n)
    order = make_rng(seed, "order", epoch).permutation(n)
    return int(order[offset])


def _clean_array(item) -> np.ndarray:
    return as_tensor(item).data


def validate_denoiser(params, dconfig, dataset: BurstDataset, config: TrainConfig):
    """Mean PSNR of denoised vs clean and of noisy center vs clean, fixed seeds."""
    if not dataset.val_clean:
        return float("nan"), float("nan")
    den_psnrs = []
    noisy_psnrs = []
    for i, clean in enumerate(dataset.val_clean):
        burst_noise = dataset.noise.with_seed(derive_seed(config.seed, "val-burst", i))
        burst = make_burst(clean, burst_noise, config.burst_size)
        out = denoise_burst(burst, params, dconfig, clamp_output=True)
        clean_arr = _clean_array(clean)
        den_psnrs.append(psnr(out.array, clean_arr))
        noisy_psnrs.append(psnr(burst[dconfig.center_index].array, clean_arr))
    return float(np.mean(den_psnrs)), float(np.mean(noisy_psnrs))


def train_denoiser(config: TrainConfig, frozen_wnet, dataset: BurstDataset,
                   dconfig: DenoiserConfig = None, params: DenoiserParams = None,
                   adam: Adam = None, start_step: int = 0) -> TrainResult:
    """Synthesize bursts, optimize the full objective, log every term per step.

    The negative sample fed to the contrastive term is the burst's center
    noisy frame (the frame the output is a restoration of). Pass params,
    adam, and start_step from a loaded checkpoint to resume.
    """
    dconfig = dconfig or DenoiserConfig()
    if params is None:
        params = init_denoiser(dconfig, seed=derive_seed(config.seed, "init"))
    named = params.named_parameters()
    if adam is None:
        adam = Adam(named, lr=config.lr)
    n_train = len(dataset.train_clean)
    center = dconfig.center_index
    log = []

    for step in range(start_step, config.steps):
        batch_clean = []
        batch_frames = [[] for _ in range(config.burst_size)]
        for j in range(config.batch_size):
            idx = _train_index(config.seed, n_train, step * config.batch_size + j)
            clean = dataset.train_clean[idx]
            burst_noise = dataset.noise.with_seed(derive_seed(config.seed, "burst", step, j))
            burst = make_burst(clean, burst_noise, config.burst_size)
            batch_clean.append(_clean_array(clean))
            for k in range(config.burst_size):
                batch_frames[k].append(burst[k].array)

        clean_t = Tensor(np.concatenate(batch_clean, axis=0))
        frames = [Tensor(np.concatenate(fs, axis=0)) for fs in batch_frames]

        ad.reset_graph()
        out = denoiser_forward(frames, params, dconfig, clamp_output=False)
        total, breakdown = final_loss(out, clean_t, frames[center], frozen_wnet, config.loss)
        total_value = total.item()
        if not np.isfinite(total_value):
            raise NumericalError(
                f"training step {step}: loss is non-finite (breakdown: {breakdown})"
            )
        total.backward()
        clip_global_norm(named, config.clip_norm)
        adam.step()
        adam.zero_grad()
        ad.reset_graph()

        row = {
            "step": step,
            "total": total_value,
            "l1": breakdown["l1"],
            "perceptual": breakdown["perceptual"],
            "closs": breakdown["closs_weighted"],
            "psnr_val": "",
        }
        if config.val_interval and (step + 1) % config.val_interval == 0:
            row["psnr_val"] = validate_denoiser(params, dconfig, dataset, config)[0]
        log.append(row)

        if (config.checkpoint_interval and config.checkpoint_dir
                and (step + 1) % config.checkpoint_interval == 0):
            save_denoiser_checkpoint(
                os.path.join(config.checkpoint_dir, f"step_{step + 1:06d}"),
                params, dconfig, adam=adam, step=step + 1, lr=config.lr)

    val_psnr, val_noisy = validate_denoiser(params, dconfig, dataset, config)
    return TrainResult(params, adam, log, val_psnr, val_noisy)


def save_denoiser_checkpoint(ckpt_dir, params, dconfig, adam=None, step=0, lr=1e-4):
    meta = {
        "kind": "denoiser",
        "step": step,
        "lr": lr,
        "adam_t": adam.t if adam is not None else 0,
        "in_frames": dconfig.in_frames,
        "base_width": dconfig.base_width,
        "depth": dconfig.depth,
        "leaky_slope": dconfig.leaky_slope,
        "residual": dconfig.residual,
    }
    checkpoint_save(ckpt_dir, denoiser_state_arrays(params, adam), meta)


TRAIN_LOG_COLUMNS = ("step", "total", "l1", "perceptual", "closs", "psnr_val")


def write_train_log(path, rows):
    """CSV with full-precision floats (repr round-trips float64 exactly)."""
    with open(path, "w") as fh:
        fh.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in TRAIN_LOG_COLUMNS:
                v = row[col]
                cells.append(repr(v) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")
