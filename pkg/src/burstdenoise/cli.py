"""Umbrella command-line interface.

Subcommands: ingest, synth-noise, pretrain-wnet, train-denoiser, denoise,
eval, ablate, gradcheck, dwt. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.

The train/ablate configuration file is plain text key=value (# comments
allowed); see DEFAULT_CONFIG_KEYS for every recognized key.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (DatasetManifest, RawImage, ingest_dataset, load_split, read_manifest,
                   read_ten, to_png, write_ten)
from .denoiser import DenoiserConfig, denoise_burst
from .errors import DataError, GraphError, NumericalError, ShapeError
from .gradsuite import run_gradient_suite
from .losses import DEFAULT_LAYER_WEIGHTS, LossConfig
from .metrics import evaluate_pairs, ssim
from .noise import NoiseParams, make_burst
from .trainer import (BurstDataset, TrainConfig, checkpoint_load, restore_denoiser,
                      save_denoiser_checkpoint, train_denoiser, write_train_log)
from .wavelet import haar_dwt2d
from .wnet import WnetConfig, freeze, load_wnet_checkpoint, save_wnet_checkpoint, wnet_pretrain

# Full-scale reference points for the ablation table (not reproducible at
# this scale; carried as context in the CSV header, never asserted).
FULLSCALE_REFERENCE = "baseline 30.45 dB PSNR, contrastive 31.97 dB PSNR"

ABLATION_MODES = ("baseline", "wnet_l1", "dcr")

DEFAULT_CONFIG_KEYS = {
    # training
    "seed": 0, "steps": 500, "batch_size": 1, "lr": 1e-4, "clip_norm": 10.0,
    "checkpoint_interval": 0, "checkpoint_dir": "", "val_interval": 0,
    # loss
    "alpha": 0.1, "layer_weights": ",".join(str(w) for w in DEFAULT_LAYER_WEIGHTS),
    "similarity_variant": "distance", "eps_cos": 1e-12, "eps_ratio": 1e-7,
    "feature_loss_mode": "closs",
    # noise
    "shot_gain": 0.0, "read_sigma": 0.05, "row_sigma": 0.0, "bias": 0.0, "quant_bits": 0,
    # denoiser architecture
    "in_frames": 5, "base_width": 32, "depth": 2, "leaky_slope": 0.1, "residual": True,
    # data / paths
    "clean_dir": "", "val_fraction": 0.2, "wnet_ckpt": "", "out_dir": "",
}


def parse_config_file(path) -> dict:
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    values = dict(DEFAULT_CONFIG_KEYS)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in values:
                raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
            default = DEFAULT_CONFIG_KEYS[key]
            if isinstance(default, bool):
                values[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                values[key] = int(value)
            elif isinstance(default, float):
                values[key] = float(value)
            else:
                values[key] = value
    return values


def _loss_config(cfg: dict) -> LossConfig:
    return LossConfig(
        alpha=cfg["alpha"],
        layer_weights=tuple(float(w) for w in str(cfg["layer_weights"]).split(",")),
        similarity_variant=cfg["similarity_variant"],
        eps_cos=cfg["eps_cos"],
        eps_ratio=cfg["eps_ratio"],
        feature_loss_mode=cfg["feature_loss_mode"],
    )


def _noise_params(cfg: dict, seed: int) -> NoiseParams:
    return NoiseParams(shot_gain=cfg["shot_gain"], read_sigma=cfg["read_sigma"],
                       row_sigma=cfg["row_sigma"], bias=cfg["bias"],
                       quant_bits=cfg["quant_bits"], seed=seed)


def _denoiser_config(cfg: dict) -> DenoiserConfig:
    return DenoiserConfig(in_frames=cfg["in_frames"], base_width=cfg["base_width"],
                          depth=cfg["depth"], leaky_slope=cfg["leaky_slope"],
                          residual=cfg["residual"])


def _load_clean_dir(clean_dir):
    """Clean patches from a directory: manifest splits if present, else all .ten."""
    manifest_path = os.path.join(clean_dir, "manifest.txt")
    if os.path.exists(manifest_path):
        manifest = read_manifest(manifest_path)
        train = load_split(clean_dir, manifest, "train")
        val = load_split(clean_dir, manifest, "val") or load_split(clean_dir, manifest, "test")
        return train, val
    names = sorted(f for f in os.listdir(clean_dir) if f.endswith(".ten"))
    if not names:
        raise DataError(f"no .ten files in {clean_dir}")
    images = [RawImage(Tensor(read_ten(os.path.join(clean_dir, n))), source_id=n) for n in names]
    n_val = max(1, len(images) // 5) if len(images) > 1 else 0
    return images[: len(images) - n_val], images[len(images) - n_val:]


def _build_dataset(cfg, seed) -> BurstDataset:
    if not cfg["clean_dir"]:
        raise DataError("config must set clean_dir")
    train, val = _load_clean_dir(cfg["clean_dir"])
    return BurstDataset(train_clean=train, val_clean=val, noise=_noise_params(cfg, seed))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args):
    manifest = ingest_dataset(args.image_dir, args.out_dir, patch=args.patch,
                              split=args.split, seed=args.seed)
    print(f"ingested {len(manifest.train)} train / {len(manifest.test)} test patches "
          f"-> {args.out_dir} (skipped {manifest.params.get('skipped_files', 0)} files)")
    return 0


def cmd_synth_noise(args):
    names = sorted(f for f in os.listdir(args.clean_dir)
                   if f.endswith(".ten") and f != "manifest.txt")
    if not names:
        raise DataError(f"no .ten files in {args.clean_dir}")
    os.makedirs(args.out_dir, exist_ok=True)
    params = NoiseParams(shot_gain=args.shot, read_sigma=args.read, row_sigma=args.row,
                         bias=args.bias, quant_bits=args.bits, seed=args.seed)
    lines = [
        f"shot_gain={params.shot_gain}", f"read_sigma={params.read_sigma}",
        f"row_sigma={params.row_sigma}", f"bias={params.bias}",
        f"quant_bits={params.quant_bits}", f"base_seed={params.seed}",
        f"burst={args.burst}",
    ]
    for i, name in enumerate(names):
        clean = RawImage(Tensor(read_ten(os.path.join(args.clean_dir, name))), source_id=name)
        burst_seed = params.seed + i * args.burst
        burst = make_burst(clean, params.with_seed(burst_seed), args.burst)
        stem = os.path.splitext(name)[0]
        for k, frame in enumerate(burst):
            write_ten(os.path.join(args.out_dir, f"{stem}_f{k}.ten"), frame.array)
        lines.append(f"burst {stem} seed={burst_seed} frames={args.burst}")
    with open(os.path.join(args.out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"synthesized {len(names)} bursts of {args.burst} -> {args.out_dir}")
    return 0


def cmd_pretrain_wnet(args):
    train, val = _load_clean_dir(args.clean_dir)
    patches = train + val  # pretraining does its own disjoint split
    params = NoiseParams(shot_gain=args.shot, read_sigma=args.read, row_sigma=args.row,
                         bias=args.bias, quant_bits=args.bits, seed=args.seed)
    config = WnetConfig(stage_widths=tuple(int(w) for w in args.widths.split(",")))
    result = wnet_pretrain(patches, params, config, epochs=args.epochs,
                           lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    save_wnet_checkpoint(args.out, result.params, config,
                         epoch=result.best_epoch, val_accuracy=result.best_accuracy)
    for epoch, acc in enumerate(result.val_accuracies):
        print(f"epoch {epoch}: val accuracy {acc:.4f}")
    print(f"best epoch {result.best_epoch} accuracy {result.best_accuracy:.4f} -> {args.out}")
    return 0


def _frozen_from_ckpt(path):
    params, config, _meta = load_wnet_checkpoint(path)
    return freeze(params, config)


def cmd_train_denoiser(args):
    cfg = parse_config_file(args.config)
    if not cfg["wnet_ckpt"]:
        raise DataError("config must set wnet_ckpt (pretrain-wnet first)")
    out_dir = cfg["out_dir"] or "."
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["seed"] if args.seed is None else args.seed
    tconfig = TrainConfig(steps=cfg["steps"], lr=cfg["lr"], batch_size=cfg["batch_size"],
                          seed=seed, loss=_loss_config(cfg), clip_norm=cfg["clip_norm"],
                          checkpoint_interval=cfg["checkpoint_interval"],
                          checkpoint_dir=cfg["checkpoint_dir"] or os.path.join(out_dir, "ckpt"),
                          val_interval=cfg["val_interval"])
    dataset = _build_dataset(cfg, seed)
    frozen = _frozen_from_ckpt(cfg["wnet_ckpt"])
    dconfig = _denoiser_config(cfg)
    result = train_denoiser(tconfig, frozen, dataset, dconfig)
    write_train_log(os.path.join(out_dir, "train_log.csv"), result.log)
    save_denoiser_checkpoint(os.path.join(out_dir, "ckpt_final"), result.params, dconfig,
                             adam=result.adam, step=tconfig.steps, lr=tconfig.lr)
    print(f"trained {tconfig.steps} steps; val PSNR {result.val_psnr:.2f} dB "
          f"(noisy center {result.val_noisy_psnr:.2f} dB) -> {out_dir}")
    return 0


def cmd_denoise(args):
    arrays, meta = checkpoint_load(args.ckpt)
    dconfig, params, _adam, _step = restore_denoiser(arrays, meta)
    if len(args.burst) != dconfig.in_frames:
        raise DataError(f"expected {dconfig.in_frames} burst files, got {len(args.burst)}")
    frames = [RawImage(Tensor(read_ten(p)), source_id=os.path.basename(p)) for p in args.burst]
    out = denoise_burst(frames, params, dconfig, clamp_output=True)
    write_ten(args.out, out.array)
    if args.png:
        to_png(out, args.png)
    print(f"denoised {len(frames)} frames -> {args.out}")
    return 0


def cmd_eval(args):
    pred_names = {f for f in os.listdir(args.pred_dir) if f.endswith(".ten")}
    ref_names = {f for f in os.listdir(args.ref_dir) if f.endswith(".ten")}
    common = sorted(pred_names & ref_names)
    if not common:
        raise DataError(f"no matching .ten filenames between {args.pred_dir} and {args.ref_dir}")
    pairs = []
    for name in common:
        pred = read_ten(os.path.join(args.pred_dir, name))
        ref = read_ten(os.path.join(args.ref_dir, name))
        pairs.append((name, Tensor(pred), Tensor(ref)))
    report = evaluate_pairs(pairs)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "psnr_db", "ssim"])
        for name, p, s in zip(report.names, report.psnr_db, report.ssim):
            writer.writerow([name, repr(p), repr(s)])
        writer.writerow(["mean", repr(report.mean_psnr), repr(report.mean_ssim)])
    print(f"evaluated {len(common)} pairs: mean PSNR {report.mean_psnr:.2f} dB, "
          f"mean SSIM {report.mean_ssim:.4f} -> {args.out}")
    return 0


def run_ablation(cfg: dict, seed: int, out_csv: str):
    """Train baseline / wnet_l1 / dcr under one shared seed and schedule.

    baseline: alpha = 0 (no feature term in the objective)
    wnet_l1:  alpha as configured, plain weighted feature L1
    dcr:      alpha as configured, contrastive ratio loss
    Each mode is evaluated on the shared validation split; one CSV row per
    mode plus the step count and the step-0 logged feature-term
    contribution.
    """
    dataset = _build_dataset(cfg, seed)
    frozen = _frozen_from_ckpt(cfg["wnet_ckpt"])
    dconfig = _denoiser_config(cfg)
    base_loss = _loss_config(cfg)
    rows = []
    for mode in ABLATION_MODES:
        if mode == "baseline":
            loss = LossConfig(alpha=0.0, layer_weights=base_loss.layer_weights,
                              similarity_variant=base_loss.similarity_variant,
                              eps_cos=base_loss.eps_cos, eps_ratio=base_loss.eps_ratio,
                              feature_loss_mode="closs")
        else:
            loss = LossConfig(alpha=base_loss.alpha, layer_weights=base_loss.layer_weights,
                              similarity_variant=base_loss.similarity_variant,
                              eps_cos=base_loss.eps_cos, eps_ratio=base_loss.eps_ratio,
                              feature_loss_mode="l1_features" if mode == "wnet_l1" else "closs")
        tconfig = TrainConfig(steps=cfg["steps"], lr=cfg["lr"], batch_size=cfg["batch_size"],
                              seed=seed, loss=loss, clip_norm=cfg["clip_norm"])
        result = train_denoiser(tconfig, frozen, dataset, dconfig)
        ssim_values = []
        for i, clean in enumerate(dataset.val_clean):
            from .seeds import derive_seed
            burst = make_burst(clean, dataset.noise.with_seed(derive_seed(seed, "val-burst", i)),
                               tconfig.burst_size)
            out = denoise_burst(burst, result.params, dconfig, clamp_output=True)
            ssim_values.append(ssim(out.array, clean.array))
        rows.append({
            "mode": mode,
            "steps": tconfig.steps,
            "psnr_db": result.val_psnr,
            "ssim": float(np.mean(ssim_values)),
            "closs_step0": result.log[0]["closs"],
            "log": result.log,
        })
    with open(out_csv, "w", newline="") as fh:
        fh.write(f"# full-scale reference (not reproducible at this scale): {FULLSCALE_REFERENCE}\n")
        writer = csv.writer(fh)
        writer.writerow(["mode", "steps", "psnr_db", "ssim", "closs_step0"])
        for row in rows:
            writer.writerow([row["mode"], row["steps"], repr(row["psnr_db"]),
                             repr(row["ssim"]), repr(row["closs_step0"])])
    return rows


def cmd_ablate(args):
    cfg = parse_config_file(args.config)
    if not cfg["wnet_ckpt"]:
        raise DataError("config must set wnet_ckpt (pretrain-wnet first)")
    seed = cfg["seed"] if args.seed is None else args.seed
    rows = run_ablation(cfg, seed, args.out)
    for row in rows:
        print(f"{row['mode']:>9}: PSNR {row['psnr_db']:.2f} dB, SSIM {row['ssim']:.4f}, "
              f"step-0 feature term {row['closs_step0']:.3e}")
    print(f"ablation table -> {args.out}")
    return 0


def cmd_gradcheck(args):
    print(f"gradient suite: {args.instances} instances per op, step {args.step:g}")
    results = run_gradient_suite(instances=args.instances, seed=args.seed,
                                 step=args.step, verbose=True)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(r.name for r in failed)}")
        return 3
    print(f"all {len(results)} op groups passed")
    return 0


def cmd_dwt(args):
    arr = read_ten(args.infile)
    with ad.no_grad():
        bands = haar_dwt2d(Tensor(arr))
    for name, band in zip(("ll", "hl", "lh", "hh"), bands.as_tuple()):
        write_ten(f"{args.out_prefix}_{name}.ten", band.data)
    print(f"wrote {args.out_prefix}_{{ll,hl,lh,hh}}.ten")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstdenoise",
        description="Low-light RAW burst denoising with contrastive feature regularization.")
    parser.add_argument("--verbose", action="store_true", help="extra progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="cut mosaic images into packed .ten patches")
    p.add_argument("--image-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth-noise", help="synthesize noisy bursts from clean patches")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--shot", type=float, default=0.0)
    p.add_argument("--read", type=float, default=0.05)
    p.add_argument("--row", type=float, default=0.0)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--burst", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_noise)

    p = sub.add_parser("pretrain-wnet", help="pretrain the embedding net (clean vs noisy)")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--widths", default="16,32,64,64,64")
    p.add_argument("--shot", type=float, default=0.0)
    p.add_argument("--read", type=float, default=0.05)
    p.add_argument("--row", type=float, default=0.0)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain_wnet)

    p = sub.add_parser("train-denoiser", help="train the burst denoiser from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("denoise", help="denoise one burst with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--burst", nargs="+", required=True, metavar="FRAME.ten")
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="PSNR/SSIM table over matching .ten files")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="baseline / wnet_l1 / dcr comparison under one seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification suite")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dwt", help="write the four Haar band files of a tensor")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_dwt)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; map usage to 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, GraphError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
