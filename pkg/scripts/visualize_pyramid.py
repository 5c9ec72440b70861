#!/usr/bin/env python3
"""Decompose an image (or a generated synthetic scene) into pyramid levels and
write each level plus the reconstruction as PNGs."""
import argparse
import os

from lemma import data
from lemma.cli import main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", default=None,
                    help="RGB PNG; a synthetic scene is generated if omitted")
    ap.add_argument("--out", default="runs/pyramid")
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    path = args.input
    if path is None:
        os.makedirs(args.out, exist_ok=True)
        image, _ = data.synth_scene(args.seed, 128)
        path = os.path.join(args.out, "scene.png")
        data.save_image(path, image)
    raise SystemExit(cli_main(["decompose", "--input", path, "--out", args.out,
                               "--depth", str(args.depth)]))


if __name__ == "__main__":
    main()
