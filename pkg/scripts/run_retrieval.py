"""Zero-shot retrieval mAP at 50% and 100% depth for trained models of several depths.

    python scripts/run_retrieval.py --k-list 0,2 --seed 0
"""
import argparse
from dataclasses import replace

from s2ga.dataio import synth_generate
from s2ga.evaluation import model_retrieval
from s2ga.experiments import STANDARD_SPEC, train_and_eval


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k-list", default="0,2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = synth_generate(replace(STANDARD_SPEC, seed=args.seed))
    x, _, mask = ds.select(ds.unseen)
    labels = [lab for lab, keep in zip(ds.labels, mask) if keep]
    for k in (int(v) for v in args.k_list.split(",")):
        model = train_and_eval(ds, k, seed=args.seed).model
        maps = {mode: model_retrieval(model, ds.unseen_table(), x, labels, mode).mean_ap
                for mode in ("fifty_percent", "hundred_percent")}
        print(f"K={k}: mAP@50% {maps['fifty_percent']:.4f}  mAP@100% {maps['hundred_percent']:.4f}")


if __name__ == "__main__":
    main()
