"""Acceptance suite. Each test records one PASS/FAIL line, printed at the end of the run.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines as
they are produced as well.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from s2ga.cli import main
from s2ga.dataio import SynthSpec, is_scs, is_sce, pca_reduce, synth_generate
from s2ga.evaluation import retrieval_map
from s2ga.experiments import STANDARD_SPEC, signal_attention_mass, train_and_eval
from s2ga.model import init_model
from s2ga.sga import SgaConfig, sga_forward

from helpers import brute_force_map

SEEDS = range(5)


def record(log, tag, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {tag}: {detail}"
    log.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module")
def benchmark_runs():
    """Unseen accuracy for K=0 and K=2 on the standard shared-parent benchmark, plus timing."""
    start = time.perf_counter()
    acc = {0: [], 2: []}
    for seed in SEEDS:
        ds = synth_generate(replace(STANDARD_SPEC, seed=seed))
        for k in acc:
            acc[k].append(train_and_eval(ds, k, seed=seed).unseen_accuracy)
    return acc, time.perf_counter() - start


def test_c1_gradient_check(acceptance_log, capsys):
    start = time.perf_counter()
    codes = {}
    for k in range(4):
        codes[k] = main(["gradcheck", "--p", "8", "--m", "4", "--q", "5", "--d", "6",
                         "--k-layers", str(k), "--tolerance", "1e-5", "--eps", "1e-6"])
    out = capsys.readouterr().out
    errs = [float(line.split("max_relative_error=")[1].split()[0]) for line in out.splitlines()
            if "max_relative_error=" in line]
    secs = time.perf_counter() - start
    ok = all(c == 0 for c in codes.values()) and secs < 30
    assert record(acceptance_log, "C1 gradient check K=0..3",
                  ok, f"max rel err {max(errs):.2e} (tol 1e-5), {secs:.1f}s (limit 30s)")


def test_c2_attention_validity(acceptance_log):
    g = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_sum, lo, hi = 0.0, 1.0, 0.0
    for _ in range(1000):
        m, k = int(g.integers(2, 9)), int(g.integers(1, 4))
        cfg = SgaConfig(p=8, m=m, q=5, d=6, k_layers=k)
        model = init_model(cfg, seed=int(g.integers(2**31)))
        model = model.with_flat(model.flatten() + g.normal(0, 0.5, model.flatten().size))
        _, trace = sga_forward(g.uniform(0, 1, (8, m)), cfg, model.layers)
        for probs in trace.probs:
            worst_sum = max(worst_sum, abs(float(np.sum(probs)) - 1.0))
            lo, hi = min(lo, float(probs.min())), max(hi, float(probs.max()))
    secs = time.perf_counter() - start
    ok = worst_sum <= 1e-10 and lo > 0.0 and hi < 1.0 and secs < 5
    assert record(acceptance_log, "C2 attention validity", ok,
                  f"max |sum-1| {worst_sum:.1e}, entries in [{lo:.2e}, {hi:.4f}], {secs:.2f}s (limit 5s)")


def test_c3_permutation_equivariance(acceptance_log):
    g = np.random.default_rng(7)
    worst_p = worst_u = 0.0
    for _ in range(200):
        m, k = int(g.integers(2, 9)), int(g.integers(1, 4))
        cfg = SgaConfig(p=8, m=m, q=5, d=6, k_layers=k)
        model = init_model(cfg, seed=int(g.integers(2**31)))
        x = g.uniform(0, 1, (8, m))
        perm = g.permutation(m)
        u, tr = sga_forward(x, cfg, model.layers)
        u_p, tr_p = sga_forward(x[:, perm], cfg, model.layers)
        worst_u = max(worst_u, float(np.max(np.abs(u - u_p))))
        for a, b in zip(tr.probs, tr_p.probs):
            worst_p = max(worst_p, float(np.max(np.abs(a[perm] - b))))
    ok = worst_p <= 1e-12 and worst_u <= 1e-12
    assert record(acceptance_log, "C3 region permutation", ok,
                  f"attention diff {worst_p:.1e}, u_G diff {worst_u:.1e} (tol 1e-12)")


def test_c4_stacking_trend(acceptance_log, benchmark_runs):
    acc, secs = benchmark_runs
    a0, a2 = float(np.mean(acc[0])), float(np.mean(acc[2]))
    ok = a2 - a0 >= 0.03 and a2 >= 0.5 and secs < 300
    assert record(acceptance_log, "C4 stacking trend", ok,
                  f"K=0 {a0:.3f}, K=2 {a2:.3f}, gain {100 * (a2 - a0):.1f} pts (need >=3, K=2 >=0.5), "
                  f"{secs:.0f}s (limit 300s)")


def test_c5_attention_localization(acceptance_log):
    start = time.perf_counter()
    masses = []
    for seed in SEEDS:
        ds = synth_generate(replace(STANDARD_SPEC, seed=seed, noise_sigma=0.0))
        run = train_and_eval(ds, 2, seed=seed)
        masses.extend(signal_attention_mass(run.model, ds))
    secs = time.perf_counter() - start
    uniform = STANDARD_SPEC.signal_regions / STANDARD_SPEC.m
    mass = float(np.mean(masses))
    ok = mass >= 1.5 * uniform and secs < 120
    assert record(acceptance_log, "C5 attention localization", ok,
                  f"signal mass {mass:.3f} vs uniform {uniform:.3f} (need >= {1.5 * uniform:.3f}), "
                  f"{secs:.0f}s (limit 120s)")


def test_c6_retrieval_oracle(acceptance_log):
    g = np.random.default_rng(606)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n_cls = int(g.integers(1, 6))
        labels = list(g.integers(0, n_cls, size=int(g.integers(n_cls, 40))))
        labels[:n_cls] = range(n_cls)
        # coarse grid values make tied distances common
        pool = g.integers(0, 3, size=(len(labels), 2)).astype(float)
        queries = g.integers(0, 3, size=(2, n_cls)).astype(float)
        for mode, ratio in (("fifty_percent", 0.5), ("hundred_percent", 1.0)):
            got = retrieval_map(queries, list(range(n_cls)), pool, labels, mode).mean_ap
            want = brute_force_map(queries.tolist(), list(range(n_cls)), pool.tolist(), labels, ratio)
            worst = max(worst, abs(got - want))
    secs = time.perf_counter() - start
    ok = worst <= 1e-12 and secs < 5
    assert record(acceptance_log, "C6 retrieval oracle", ok,
                  f"max |mAP - oracle| {worst:.1e} (tol 1e-12), {secs:.2f}s (limit 5s)")


def test_c7_split_correctness(acceptance_log, benchmark_runs):
    bad = 0
    for seed in range(50):
        base = SynthSpec(num_classes=20, images_per_class=1, p=3, m=2, q=10, seed=seed)
        bad += not is_scs(synth_generate(replace(base, split="scs")))
        bad += not is_sce(synth_generate(replace(base, split="sce")))
    sce = [train_and_eval(synth_generate(replace(STANDARD_SPEC, seed=s, split="sce")), 2, seed=s).unseen_accuracy
           for s in SEEDS]
    scs_mean, sce_mean = float(np.mean(benchmark_runs[0][2])), float(np.mean(sce))
    ok = bad == 0 and sce_mean <= scs_mean
    assert record(acceptance_log, "C7 split correctness", ok,
                  f"{bad} predicate failures over 50 taxonomies, K=2 unseen acc SCE {sce_mean:.3f} "
                  f"<= SCS {scs_mean:.3f}")


def _pipeline(root):
    data, model, metrics = root / "data.txt", root / "model.txt", root / "metrics.txt"
    codes = [
        main(["synth", "--out", str(data), "--seed", "11"]),
        main(["train", str(data), "--out", str(model), "--log", str(root / "log.txt"), "--d", "16",
              "--learning-rate", "0.003", "--max-iters", "150", "--seed", "11"]),
        main(["eval", str(model), str(data), "--metrics-out", str(metrics)]),
    ]
    return codes, model.read_bytes(), metrics.read_bytes()


def test_c8_determinism(acceptance_log, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    codes_a, model_a, metrics_a = _pipeline(tmp_path / "a")
    codes_b, model_b, metrics_b = _pipeline(tmp_path / "b")
    ok = codes_a == codes_b == [0, 0, 0] and model_a == model_b and metrics_a == metrics_b
    assert record(acceptance_log, "C8 determinism", ok,
                  f"model files identical={model_a == model_b}, metrics files identical={metrics_a == metrics_b}")


def test_c9_pca_oracle(acceptance_log):
    g = np.random.default_rng(909)
    worst = 0.0
    for _ in range(20):
        q, n = int(g.integers(3, 12)), int(g.integers(4, 60))
        x = g.normal(size=(q, n)) * g.uniform(0.1, 5.0, (q, 1))
        k = int(g.integers(1, min(q, n) + 1))
        reduced, basis = pca_reduce(x, k)
        evals = np.sort(np.linalg.eigvalsh(np.cov(x)))[::-1][:k]
        worst = max(worst, float(np.max(np.abs(basis.variances - evals))),
                    float(np.max(np.abs(np.var(reduced, axis=1, ddof=1) - evals))))
    ok = worst <= 1e-6
    assert record(acceptance_log, "C9 PCA variances", ok, f"max |var - eigenvalue| {worst:.1e} (tol 1e-6)")
