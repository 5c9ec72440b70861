#!/usr/bin/env python3
"""Profile parameter counts, analytic GFLOPs, and CPU latency across block
configurations at a chosen input resolution."""
import argparse

from lemma import model as M
from lemma import trainer


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", default="384x512", help="input size HxW")
    ap.add_argument("--nc", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--grid", default="3,3,3;3,7,3;7,7,1",
                    help="semicolon-separated 'L,M,H' triples")
    args = ap.parse_args()
    h, w = (int(x) for x in args.size.lower().split("x"))

    print(f"{'config':>8} {'params':>10} {'gmacs':>8} {'gflops':>8} {'median_ms':>10}")
    for triple in args.grid.split(";"):
        l, m, hh = (int(x) for x in triple.split(","))
        model = M.build(M.LemmaConfig(nrb_l=l, nrb_m=m, nrb_h=hh, nc=args.nc))
        rep = trainer.profile(model, h, w, repeats=args.repeats, warmup=2)
        print(f"{triple:>8} {rep['params']:>10} {rep['gmacs']:>8.3f} "
              f"{rep['gflops']:>8.3f} {rep['median_ms']:>10.1f}")
    print(f"\nreference point: {trainer.REPORTED_GFLOPS_384x512} GFLOPs / "
          f"{trainer.REPORTED_PARAMS_M}M params at 384x512 for the 7,7,1 "
          "configuration (accounting convention unstated; gflops above count "
          "2 FLOPs per multiply-accumulate)")


if __name__ == "__main__":
    main()
