"""Shared experiment recipes: the standard synthetic benchmark and depth ablations."""
from dataclasses import dataclass, replace

import numpy as np

from s2ga.dataio import SynthSpec, synth_generate
from s2ga.evaluation import evaluate_accuracy
from s2ga.sga import SgaConfig, sga_forward
from s2ga.trainer import TrainConfig, train

# 20 classes (15 seen / 5 unseen), 6 regions of which 2 carry the class signal
STANDARD_SPEC = SynthSpec(num_classes=20, images_per_class=30, p=24, m=6, q=10,
                          signal_regions=2, noise_sigma=0.3)
# the CLI defaults (lr 1e-4, patience 30) suit datasets of thousands of images;
# with a few hundred training images a larger step and patience are needed
BENCH_TRAIN = TrainConfig(learning_rate=3e-3, batch_size=512, max_iterations=1500, patience=300)
BENCH_D = 16


@dataclass
class RunResult:
    k_layers: int
    seed: int
    unseen_accuracy: float
    best_val_accuracy: float
    iterations: int
    model: object = None


def train_and_eval(ds, k_layers, d=BENCH_D, train_cfg=BENCH_TRAIN, seed=None):
    """Train on the seen split of ``ds`` and report zero-shot accuracy on the unseen split."""
    if seed is not None:
        train_cfg = replace(train_cfg, seed=seed)
    cfg = SgaConfig(p=ds.p, m=ds.m, q=ds.q, d=d, k_layers=k_layers)
    xs, ys, _ = ds.select(ds.seen)
    xu, yu, _ = ds.select(ds.unseen)
    model, report = train(xs, ys, ds.seen_table(), cfg, train_cfg)
    acc = evaluate_accuracy(model, xu, yu, ds.unseen_table()).top1_accuracy
    return RunResult(k_layers, train_cfg.seed, acc, report.best_val_accuracy, report.iterations, model)


def depth_ablation(k_list, seeds, spec=STANDARD_SPEC, d=BENCH_D, train_cfg=BENCH_TRAIN):
    """Mean unseen accuracy per attention depth over seeded benchmark datasets."""
    runs = {k: [] for k in k_list}
    for seed in seeds:
        ds = synth_generate(replace(spec, seed=seed))
        for k in k_list:
            runs[k].append(train_and_eval(ds, k, d, train_cfg, seed=seed))
    return runs


def signal_attention_mass(model, ds, class_ids=None):
    """Mean attention mass on the planted signal regions, per layer.

    Uses the generator's signal mask, so only in-memory synthetic datasets
    qualify. Returns one value per layer; the uniform baseline is
    ``signal_regions / m``.
    """
    if ds.signal_mask is None:
        raise ValueError("dataset has no planted signal regions")
    class_ids = ds.unseen if class_ids is None else class_ids
    x, _, mask = ds.select(class_ids)
    _, trace = sga_forward(x, model.cfg, model.layers)
    planted = ds.signal_mask[mask]
    return [float(np.mean(np.sum(probs * planted, axis=1))) for probs in trace.probs]
