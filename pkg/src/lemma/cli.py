"""Command-line interface: decompose, synth, train, eval, segment, profile, ablate."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data, model as M, pyramid, trainer
from .errors import LemmaError
from .losses import LossConfig
from .model import LemmaConfig
from .tensor import Tensor


class UsageError(Exception):
    pass


def _parse_config(s: str, nc: int, width_low: int = 64, width_high: int = 16) -> LemmaConfig:
    parts = s.split(",")
    if len(parts) != 3:
        raise UsageError(f"--config must be 'L,M,H', got {s!r}")
    try:
        l, m, h = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--config must be three integers, got {s!r}")
    return LemmaConfig(nrb_l=l, nrb_m=m, nrb_h=h, nc=nc,
                       width_low=width_low, width_high=width_high)


def _parse_size(s: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in s.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must be HxW, got {s!r}")
    return h, w


def _loss_config(args) -> LossConfig:
    return LossConfig(kind=args.loss)


def cmd_decompose(args) -> int:
    image = data.load_image(args.input)
    padded, rec = pyramid.pad_to_multiple(image, 2 ** (args.depth - 1))
    levels = pyramid.decompose(padded, depth=args.depth)
    os.makedirs(args.out, exist_ok=True)
    for i, level in enumerate(levels.levels, start=1):
        arr = level.data[0]
        if i < levels.depth:
            arr = arr + 0.5  # band-pass levels are signed; center for display
        data.save_image(os.path.join(args.out, f"l{i}.png"), np.clip(arr, 0, 1))
    recon = pyramid.reconstruct(levels)
    data.save_image(os.path.join(args.out, "reconstruction.png"), recon)
    err = float(np.abs(recon.data - padded.data).max())
    print(f"max reconstruction error: {err:.3e}")
    return 0


def cmd_synth(args) -> int:
    path = data.build_synthetic_dataset(args.out, args.n, size=args.size,
                                        nc=args.nc, seed=args.seed,
                                        val_fraction=args.val_fraction)
    print(path)
    return 0


def cmd_train(args) -> int:
    manifest = data.load_manifest(args.manifest)
    config = _parse_config(args.config, args.nc or manifest.nc,
                           args.width_low, args.width_high)
    result = trainer.train(
        manifest, config, _loss_config(args), lr=args.lr, epochs=args.epochs,
        batch_size=args.batch, seed=args.seed, out_dir=args.out,
        resume=args.resume, eval_every=args.eval_every,
        target_miou=args.target_miou, log=print)
    if args.checkpoint:
        from .checkpoint import save_checkpoint
        save_checkpoint(args.checkpoint, result.model, step=len(result.history))
    if result.best_miou is not None:
        print(f"best val mIoU: {result.best_miou:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    manifest = data.load_manifest(args.manifest)
    model, _, _ = load_checkpoint(args.checkpoint)
    report = trainer.evaluate(model, manifest, args.split, batch_size=args.batch)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_segment(args) -> int:
    from .checkpoint import load_checkpoint
    model, _, _ = load_checkpoint(args.checkpoint)
    image = data.load_image(args.input)
    padded, rec = pyramid.pad_to_multiple(image, 4)
    mask = M.predict_mask(model, padded)[0][:rec.orig_h, :rec.orig_w]
    os.makedirs(args.out, exist_ok=True)
    data.save_mask(os.path.join(args.out, "mask.png"), mask)
    palette = data.DEFAULT_PALETTE[:model.config.nc]
    if args.manifest:
        palette = data.load_manifest(args.manifest).palette
    from PIL import Image
    Image.fromarray(data.colorize_mask(mask, palette), mode="RGB").save(
        os.path.join(args.out, "color.png"))
    print(os.path.join(args.out, "mask.png"))
    return 0


def cmd_profile(args) -> int:
    h, w = _parse_size(args.size)
    config = _parse_config(args.config, args.nc, args.width_low, args.width_high)
    model = M.build(config, seed=args.seed)
    report = trainer.profile(model, h, w, repeats=args.repeats)
    report["reference_gflops"] = trainer.REPORTED_GFLOPS_384x512
    report["reference_ratio_gmacs"] = report["gmacs"] / trainer.REPORTED_GFLOPS_384x512
    report["reference_ratio_gflops"] = report["gflops"] / trainer.REPORTED_GFLOPS_384x512
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    print(f"reported reference: {trainer.REPORTED_GFLOPS_384x512} GFLOPs at 384x512; "
          f"this run: {report['gflops']:.2f} GFLOPs ({report['gmacs']:.2f} GMACs); "
          "accounting convention of the reference (MACs vs 2xMACs, input size) "
          "is unstated, so ratios under both conventions are reported",
          file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    manifest = data.load_manifest(args.manifest)
    try:
        with open(args.grid) as f:
            lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    except OSError as e:
        raise UsageError(f"cannot read grid file {args.grid}: {e}")
    if not lines:
        raise UsageError(f"grid file {args.grid} is empty")
    h, w = _parse_size(args.size)
    rows = []
    for line in lines:
        config = _parse_config(line, args.nc or manifest.nc,
                               args.width_low, args.width_high)
        result = trainer.train(manifest, config, _loss_config(args), lr=args.lr,
                               epochs=args.epochs, batch_size=args.batch,
                               seed=args.seed)
        split = "val" if manifest.split("val") else "train"
        report = trainer.evaluate(result.model, manifest, split)
        flops = M.count_flops(result.model, h, w)
        rows.append({
            "nrb_l": config.nrb_l, "nrb_m": config.nrb_m, "nrb_h": config.nrb_h,
            "params": M.count_params(result.model),
            "gflops": round(flops["gflops"], 6),
            "miou": round(report["miou"], 6),
        })
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["nrb_l", "nrb_m", "nrb_h",
                                               "params", "gflops", "miou"])
        writer.writeheader()
        writer.writerows(rows)
    print(args.out)
    return 0


def _add_model_flags(p):
    p.add_argument("--config", default="7,7,1", help="residual blocks per branch, 'L,M,H'")
    p.add_argument("--nc", type=int, default=None, help="class count")
    p.add_argument("--width-low", type=int, default=64)
    p.add_argument("--width-high", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p):
    p.add_argument("--loss", choices=["focal", "dice", "ce_dice"], default="focal")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lemma",
                                     description="pyramid-based lightweight segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write pyramid levels of an image as PNGs")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=3)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="generate a synthetic dataset + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--nc", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest dataset")
    p.add_argument("--manifest", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", default=None, help="directory for checkpoints + metrics log")
    p.add_argument("--checkpoint", default=None, help="write final model here")
    p.add_argument("--resume", default=None)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--target-miou", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="segment one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None, help="palette source (optional)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("profile", help="latency + analytic cost report")
    _add_model_flags(p)
    p.add_argument("--size", default="384x512", help="input size HxW")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_profile)
    # profile needs a concrete class count even without a dataset
    p.set_defaults(nc=5)

    p = sub.add_parser("ablate", help="train/evaluate a grid of block configurations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help="file with one 'L,M,H' triple per line")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--size", default="64x64", help="resolution for the gflops column")
    p.add_argument("--nc", type=int, default=None)
    p.add_argument("--width-low", type=int, default=64)
    p.add_argument("--width-high", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except LemmaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
