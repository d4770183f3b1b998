"""Attention mass on planted signal regions after training, per layer.

    python scripts/run_localization.py --noise-sigma 0 --k 2
"""
import argparse
from dataclasses import replace

import numpy as np

from s2ga.dataio import synth_generate
from s2ga.experiments import STANDARD_SPEC, signal_attention_mass, train_and_eval


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--noise-sigma", type=float, default=0.0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    uniform = STANDARD_SPEC.signal_regions / STANDARD_SPEC.m
    all_mass = []
    for seed in (int(s) for s in args.seeds.split(",")):
        ds = synth_generate(replace(STANDARD_SPEC, seed=seed, noise_sigma=args.noise_sigma))
        run = train_and_eval(ds, args.k, seed=seed)
        mass = signal_attention_mass(run.model, ds)
        all_mass.extend(mass)
        print(f"seed {seed}: acc {run.unseen_accuracy:.3f} mass per layer " + " ".join(f"{v:.3f}" for v in mass))
    print(f"mean mass {np.mean(all_mass):.3f}, uniform baseline {uniform:.3f}")


if __name__ == "__main__":
    main()
