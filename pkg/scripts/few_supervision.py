"""Held-out CIDEr-D with and without pseudo labels, one toy corpus per seed.

    python3 scripts/few_supervision.py --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from fewcap.experiments import few_supervision


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--videos", type=int, default=200)
    ap.add_argument("--n-pse", type=int, default=2)
    args = ap.parse_args()
    rows = []
    print("seed\tGT only\tGT + pseudo")
    for seed in args.seeds:
        base, with_pse = few_supervision(seed, args.videos, args.n_pse)
        rows.append((base, with_pse))
        print(f"{seed}\t{base:.4f}\t{with_pse:.4f}", flush=True)
    base, with_pse = np.mean(rows, axis=0)
    print(f"mean\t{base:.4f}\t{with_pse:.4f}")


if __name__ == "__main__":
    main()
