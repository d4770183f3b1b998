import math

import numpy as np
import pytest

from helpers import separable_problem
from s2ga.sga import SgaConfig
from s2ga.trainer import TrainConfig, grad_check, rmsprop_step, train

SMALL = SgaConfig(p=8, m=4, q=5, d=6, k_layers=2)


def test_rmsprop_zero_grad():
    cfg = TrainConfig()
    param, state = rmsprop_step(np.array([1.0, -2.0]), np.zeros(2), np.array([0.5, 0.1]), cfg)
    assert np.array_equal(param, [1.0, -2.0])
    np.testing.assert_allclose(state, [0.45, 0.09])


def test_rmsprop_first_step_closed_form():
    cfg = TrainConfig(learning_rate=1e-3)
    g = np.array([0.5, -3.0, 1e-4])
    param, state = rmsprop_step(np.zeros(3), g, np.zeros(3), cfg)
    want = -cfg.learning_rate * g / (np.sqrt(0.1 * g * g) + cfg.rmsprop_epsilon)
    np.testing.assert_allclose(param, want, rtol=1e-14)
    assert np.all(state >= 0)


def test_rmsprop_descends_quadratic():
    cfg = TrainConfig(learning_rate=1e-2)
    x, s = np.array([5.0]), np.zeros(1)
    for _ in range(100):
        x, s = rmsprop_step(x, 2.0 * x, s, cfg)
        assert s[0] >= 0
    assert abs(x[0]) < 5.0 and abs(x[0]) < 4.0


def test_rmsprop_rejects_non_finite():
    with pytest.raises(FloatingPointError, match="layer0.w_p"):
        rmsprop_step(np.zeros(2), np.array([1.0, np.inf]), np.zeros(2), TrainConfig(), "layer0.w_p")


def test_degenerate_stop_after_two_iterations():
    x, y, table = separable_problem()
    cfg = SgaConfig(p=6, m=2, q=3, d=4, k_layers=1)
    model, report = train(x, y, table, cfg, TrainConfig(learning_rate=0.0, patience=1))
    assert report.iterations == 2
    assert report.stop_reason == "early-stop"
    assert report.best_iteration == 1


def test_separable_problem_reaches_full_accuracy():
    x, y, table = separable_problem()
    cfg = SgaConfig(p=6, m=2, q=3, d=8, k_layers=2)
    tcfg = TrainConfig(learning_rate=1e-2, max_iterations=300, patience=300, seed=3)
    model, report = train(x, y, table, cfg, tcfg)
    assert report.best_val_accuracy == 1.0
    assert report.val_accuracy[-1] == 1.0
    assert report.history[199].total < report.history[0].total


def test_training_is_deterministic():
    x, y, table = separable_problem(seed=4)
    cfg = SgaConfig(p=6, m=2, q=3, d=5, k_layers=2)
    tcfg = TrainConfig(learning_rate=5e-3, max_iterations=40, batch_size=16, seed=9)
    m1, r1 = train(x, y, table, cfg, tcfg)
    m2, r2 = train(x, y, table, cfg, tcfg)
    assert [h.total for h in r1.history] == [h.total for h in r2.history]
    assert np.array_equal(m1.flatten(), m2.flatten())


def test_returns_best_validation_parameters():
    x, y, table = separable_problem(noise=0.4, seed=1)
    cfg = SgaConfig(p=6, m=2, q=3, d=5, k_layers=1)
    tcfg = TrainConfig(learning_rate=2e-2, max_iterations=60, patience=5, seed=2)
    model, report = train(x, y, table, cfg, tcfg)
    assert len(report.history) <= tcfg.max_iterations
    assert report.best_val_accuracy == max(report.val_accuracy)
    assert report.val_accuracy.index(report.best_val_accuracy) + 1 == report.best_iteration
    if report.stop_reason == "early-stop":
        assert report.iterations == report.best_iteration + tcfg.patience


def test_log_lines(tmp_path):
    x, y, table = separable_problem()
    cfg = SgaConfig(p=6, m=2, q=3, d=4, k_layers=1)
    path = tmp_path / "train.log"
    with open(path, "w") as fh:
        train(x, y, table, cfg, TrainConfig(max_iterations=3, patience=10), log=fh)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("iter=1 classify=") and "val_acc=" in lines[0]


def test_empty_split_rejected():
    x, y, table = separable_problem()
    cfg = SgaConfig(p=6, m=2, q=3, d=4, k_layers=1)
    with pytest.raises(ValueError):
        train(x[:0], y[:0], table, cfg)
    with pytest.raises(ValueError):
        train(x[:1], y[:1], table, cfg)


@pytest.mark.parametrize("k", [0, 2])
def test_grad_check_passes(k):
    report = grad_check(SgaConfig(p=8, m=4, q=5, d=6, k_layers=k), tolerance=1e-5)
    assert report.passed, report.errors
    names = set(report.errors)
    assert {"matcher.w_e", "matcher.b_e"} <= names
    assert any(n.startswith("layer") for n in names) == (k > 0)


def test_grad_check_infinite_tolerance_always_passes():
    assert grad_check(SMALL, tolerance=math.inf).passed
    assert not grad_check(SMALL, tolerance=0.0).passed


def test_full_gradient_matches_finite_differences_multiple_trials():
    report = grad_check(SgaConfig(p=7, m=3, q=4, d=5, k_layers=3), trials=3, tolerance=1e-5, seed=11,
                        lam_align=0.5, lam_guide=2.0)
    assert report.passed, report.errors
