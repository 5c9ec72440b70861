#!/usr/bin/env python3
"""Block-count ablation on a synthetic dataset via the `lemma ablate` CLI.

Writes a CSV with one row per configuration: block counts, parameter count,
analytic gflops, and held-out mIoU.
"""
import argparse
import os

from lemma import data
from lemma.cli import main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/ablation")
    ap.add_argument("--grid", default="3,3,3;3,7,3;7,7,1")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    manifest = data.build_synthetic_dataset(
        os.path.join(args.workdir, "data"), args.n, size=args.size,
        nc=4, seed=args.seed)
    grid_path = os.path.join(args.workdir, "grid.txt")
    with open(grid_path, "w") as f:
        for triple in args.grid.split(";"):
            f.write(triple + "\n")
    out = os.path.join(args.workdir, "ablation.csv")
    rc = cli_main(["ablate", "--manifest", manifest, "--grid", grid_path,
                   "--out", out, "--size", f"{args.size}x{args.size}",
                   "--epochs", str(args.epochs), "--seed", str(args.seed)])
    if rc == 0:
        with open(out) as f:
            print(f.read())
    raise SystemExit(rc)


if __name__ == "__main__":
    main()
