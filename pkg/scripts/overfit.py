"""Overfit the captioning model on a handful of toy videos.

    python3 scripts/overfit.py --videos 16 --epochs 200
"""

import argparse

from fewcap.experiments import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-q", "--quiet", action="store_true", help="skip per-epoch lines")
    args = ap.parse_args()
    res = overfit(args.videos, args.seed, args.epochs, log=None if args.quiet else print)
    print(f"stopped at epoch {res.epochs}: sentence loss {res.sentence_loss:.4f}, "
          f"exact captions {res.exact}/{res.total}, {res.seconds:.1f}s")
    for vid, cap in sorted(res.mismatches.items()):
        print(f"  {vid}: {cap}")


if __name__ == "__main__":
    main()
