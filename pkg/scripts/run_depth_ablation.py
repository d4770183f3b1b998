"""Unseen accuracy versus attention depth on the standard synthetic benchmark.

    python scripts/run_depth_ablation.py --k-list 0,1,2,3 --seeds 0,1,2,3,4
"""
import argparse
import time

import numpy as np

from s2ga.experiments import depth_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k-list", default="0,1,2,3")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    k_list = [int(k) for k in args.k_list.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    start = time.perf_counter()
    runs = depth_ablation(k_list, seeds)
    print(f"{'K':>3} {'mean':>7} {'std':>7}  per-seed")
    for k, rs in runs.items():
        accs = [r.unseen_accuracy for r in rs]
        print(f"{k:>3} {np.mean(accs):>7.4f} {np.std(accs):>7.4f}  " + " ".join(f"{a:.3f}" for a in accs))
    print(f"({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
