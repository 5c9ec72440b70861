#!/usr/bin/env python3
"""Desk-scale training demo: synthetic marine scenes, small model, few epochs.

Generates a dataset, trains with the chosen loss, and prints the held-out
metrics report. Everything is deterministic for a fixed --seed.
"""
import argparse
import json
import os

from lemma import data, trainer
from lemma.losses import LossConfig
from lemma.model import LemmaConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/demo")
    ap.add_argument("--n", type=int, default=200, help="number of scenes")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--nc", type=int, default=4)
    ap.add_argument("--loss", choices=["focal", "dice", "ce_dice"], default="focal")
    ap.add_argument("--blocks", default="3,3,1", help="residual blocks 'L,M,H'")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target-miou", type=float, default=None)
    args = ap.parse_args()

    manifest_path = data.build_synthetic_dataset(
        os.path.join(args.workdir, "data"), args.n, size=args.size,
        nc=args.nc, seed=args.seed)
    manifest = data.load_manifest(manifest_path)
    l, m, h = (int(x) for x in args.blocks.split(","))
    config = LemmaConfig(nrb_l=l, nrb_m=m, nrb_h=h, nc=args.nc)

    result = trainer.train(
        manifest, config, LossConfig(kind=args.loss), lr=args.lr,
        epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        out_dir=os.path.join(args.workdir, "train"),
        target_miou=args.target_miou, log=print)

    report = trainer.evaluate(result.model, manifest, "val")
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
