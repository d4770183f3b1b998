"""Command-line entry point: synth | train | eval | retrieve | gradcheck | ablate.

Exit codes: 0 success, 1 check or evaluation failure, 2 usage or validation
error. Any subcommand accepts ``--config FILE`` holding ``key=value`` lines
(keys are flag names without dashes, e.g. ``learning-rate=0.003``); explicit
flags override the file.
"""
import argparse
import sys

import numpy as np

from s2ga.dataio import SynthSpec, load_dataset, reduce_semantics, save_dataset, synth_generate
from s2ga.evaluation import (
    DEPTH_RATIOS,
    evaluate_accuracy,
    model_retrieval,
    write_metrics,
)
from s2ga.experiments import train_and_eval
from s2ga.model import load_model, save_model
from s2ga.sga import SgaConfig
from s2ga.trainer import TrainConfig, grad_check, train

DEPTHS = {"50": "fifty_percent", "100": "hundred_percent"}


class UsageError(Exception):
    pass


def read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _add_train_flags(p):
    p.add_argument("--k-layers", type=int, default=2, help="stacked attention layers (0 = no attention)")
    p.add_argument("--d", type=int, default=128, help="latent dimension")
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--rmsprop-decay", type=float, default=0.9)
    p.add_argument("--rmsprop-epsilon", type=float, default=1e-8)
    p.add_argument("--lambda-align", type=float, default=1.0)
    p.add_argument("--lambda-guide", type=float, default=1.0)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="s2ga", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic zero-shot dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--p", type=int, default=24)
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--q", type=int, default=10)
    p.add_argument("--signal-regions", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--unseen-fraction", type=float, default=0.25)
    p.add_argument("--split", choices=["scs", "sce", "random"], default="scs")
    p.add_argument("--pca-dim", type=int, default=0, help="reduce class semantics to this many dims (0 = off)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on the seen split of a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", default=None, help="training log file (default: stdout)")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="zero-shot accuracy of a model on a dataset split")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--split", choices=["unseen", "seen"], default="unseen")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--metrics-out", default=None)
    p.add_argument("--min-accuracy", type=float, default=None, help="exit 1 if top-1 accuracy is below this")

    p = sub.add_parser("retrieve", help="zero-shot retrieval mAP")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--depth", choices=sorted(DEPTHS), action="append",
                   help="retrieval depth in percent of class size; repeatable (default: both)")
    p.add_argument("--pool", choices=["unseen", "all"], default="unseen",
                   help="images ranked for each query: unseen classes only, or the whole dataset")
    p.add_argument("--metrics-out", default=None)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--k-layers", type=int, default=2)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="unseen accuracy for several attention depths")
    p.add_argument("dataset")
    p.add_argument("--k-list", default="0,1,2,3")
    p.add_argument("--seeds", default="0", help="comma-separated training seeds")
    p.add_argument("--metrics-out", default=None)
    _add_train_flags(p)

    for action in sub.choices.values():
        action.add_argument("--config", default=None, help="key=value file of flag defaults")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            values = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        known = {a.dest: a for a in sub._actions}
        for key in values:
            if key not in known or key == "config":
                raise UsageError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        defaults = {}
        for key, raw in values.items():
            action = known[key]
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"{args.config}: bad value for {key}: {raw!r}") from None
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def train_config(args):
    return TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size, max_iterations=args.max_iters,
        patience=args.patience, rmsprop_decay=args.rmsprop_decay, rmsprop_epsilon=args.rmsprop_epsilon,
        seed=args.seed, lam_align=args.lambda_align, lam_guide=args.lambda_guide,
        val_fraction=args.val_fraction,
    )


def _load(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc.strerror or exc}") from None


def _load_pair(model_path, dataset_path):
    try:
        model = load_model(model_path)
    except OSError as exc:
        raise UsageError(f"cannot read model {model_path}: {exc.strerror or exc}") from None
    ds = _load(dataset_path)
    cfg = model.cfg
    if (cfg.p, cfg.m, cfg.q) != (ds.p, ds.m, ds.q):
        raise UsageError(f"model dims (p={cfg.p}, m={cfg.m}, q={cfg.q}) do not match "
                         f"dataset dims (p={ds.p}, m={ds.m}, q={ds.q})")
    return model, ds


def cmd_synth(args):
    spec = SynthSpec(num_classes=args.classes, images_per_class=args.per_class, p=args.p, m=args.m,
                     q=args.q, signal_regions=args.signal_regions, noise_sigma=args.noise_sigma,
                     seed=args.seed, unseen_fraction=args.unseen_fraction, split=args.split)
    ds = synth_generate(spec)
    if args.pca_dim:
        ds = reduce_semantics(ds, args.pca_dim)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {len(ds.image_ids)} images, {ds.classes.num_classes} classes "
          f"({len(ds.seen)} seen / {len(ds.unseen)} unseen), p={ds.p} m={ds.m} q={ds.q}")
    return 0


def cmd_train(args):
    ds = _load(args.dataset)
    cfg = SgaConfig(p=ds.p, m=ds.m, q=ds.q, d=args.d, k_layers=args.k_layers)
    xs, ys, _ = ds.select(ds.seen)
    log = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        model, report = train(xs, ys, ds.seen_table(), cfg, train_config(args), log=log)
    finally:
        if args.log:
            log.close()
    save_model(model, args.out)
    print(f"stop={report.stop_reason} iterations={report.iterations} "
          f"best_iteration={report.best_iteration} best_val_accuracy={report.best_val_accuracy:.6f}")
    return 0


def cmd_eval(args):
    model, ds = _load_pair(args.model, args.dataset)
    classes = ds.unseen if args.split == "unseen" else ds.seen
    if not classes:
        raise UsageError(f"dataset has no {args.split} classes")
    x, y, _ = ds.select(classes)
    res = evaluate_accuracy(model, x, y, ds.table(classes), args.metric)
    metrics = {
        "split": args.split,
        "metric": args.metric,
        "num_images": len(y),
        "num_classes": len(classes),
        "top1_accuracy": res.top1_accuracy,
        "macro_accuracy": res.macro_accuracy,
    }
    for label, acc in res.per_class.items():
        metrics[f"class.{label}.accuracy"] = acc
    _emit(metrics, args.metrics_out)
    if args.min_accuracy is not None and res.top1_accuracy < args.min_accuracy:
        print(f"FAIL: accuracy {res.top1_accuracy:.6f} below {args.min_accuracy:.6f}")
        return 1
    return 0


def cmd_retrieve(args):
    model, ds = _load_pair(args.model, args.dataset)
    if not ds.unseen:
        raise UsageError("dataset has no unseen classes to query")
    pool_classes = ds.unseen if args.pool == "unseen" else list(ds.classes.labels)
    x, _, mask = ds.select(pool_classes)
    labels = [lab for lab, keep in zip(ds.labels, mask) if keep]
    metrics = {"pool": args.pool, "pool_size": len(labels), "num_queries": len(ds.unseen)}
    for depth in args.depth or ["50", "100"]:
        res = model_retrieval(model, ds.unseen_table(), x, labels, DEPTHS[depth])
        metrics[f"depth{depth}.map"] = res.mean_ap
        for label, ap in res.per_query.items():
            metrics[f"depth{depth}.{label}.ap"] = ap
    _emit(metrics, args.metrics_out)
    return 0


def cmd_gradcheck(args):
    cfg = SgaConfig(p=args.p, m=args.m, q=args.q, d=args.d, k_layers=args.k_layers)
    report = grad_check(cfg, trials=args.trials, tolerance=args.tolerance, eps=args.eps, seed=args.seed)
    for name, err in report.errors.items():
        print(f"{name:<16} {err:.3e} {'ok' if err < args.tolerance else 'FAIL'}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict} max_relative_error={report.max_error:.3e} tolerance={args.tolerance:g}")
    return 0 if report.passed else 1


def cmd_ablate(args):
    ds = _load(args.dataset)
    try:
        k_list = [int(k) for k in args.k_list.split(",")]
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise UsageError("--k-list and --seeds take comma-separated integers") from None
    if any(k < 0 for k in k_list):
        raise UsageError("attention depths must be >= 0")
    base = train_config(args)
    metrics = {"num_seeds": len(seeds)}
    print(f"{'K':>3} {'accuracy':>9} {'std':>9}")
    for k in k_list:
        accs = [train_and_eval(ds, k, args.d, base, seed=s).unseen_accuracy for s in seeds]
        mean, std = float(np.mean(accs)), float(np.std(accs))
        print(f"{k:>3} {mean:>9.4f} {std:>9.4f}")
        metrics[f"k{k}.accuracy"] = mean
        metrics[f"k{k}.std"] = std
    if args.metrics_out:
        write_metrics(args.metrics_out, metrics)
    return 0


def _emit(metrics, path):
    for key, value in metrics.items():
        print(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
    if path:
        write_metrics(path, metrics)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None):
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
