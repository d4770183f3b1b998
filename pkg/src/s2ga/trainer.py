"""Joint RMSProp training with validation early stopping, plus gradient checking."""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from s2ga.matcher import ClassSemanticTable, class_probs, embed_all
from s2ga.model import init_model, loss_and_grads
from s2ga.tensor import finite_diff_grad


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 512
    max_iterations: int = 3000
    patience: int = 30
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    lam_align: float = 1.0
    lam_guide: float = 1.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.patience < 1 or self.batch_size < 1 or self.max_iterations < 0:
            raise ValueError("patience and batch_size must be >= 1, max_iterations >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class TrainReport:
    history: list = field(default_factory=list)  # LossBreakdown per iteration
    val_accuracy: list = field(default_factory=list)
    best_val_accuracy: float = -1.0
    best_iteration: int = 0
    stop_reason: str = "max-iterations"
    seconds: float = 0.0

    @property
    def iterations(self):
        return len(self.history)


def rmsprop_step(param, grad, state, cfg, name="param"):
    """One RMSProp update. Returns ``(new_param, new_state)``."""
    param, grad, state = np.asarray(param, float), np.asarray(grad, float), np.asarray(state, float)
    if param.shape != grad.shape or param.shape != state.shape:
        raise ValueError(f"{name}: shapes {param.shape}, {grad.shape}, {state.shape} disagree")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient in {name}")
    decay = cfg.rmsprop_decay
    state = decay * state + (1.0 - decay) * grad * grad
    param = param - cfg.learning_rate * grad / (np.sqrt(state) + cfg.rmsprop_epsilon)
    return param, state


def seen_accuracy(model, features, y, table):
    """Top-1 accuracy of the softmax classifier over the seen classes."""
    probs = class_probs(model.represent(features), embed_all(table, model.matcher))
    return float(np.mean(np.argmax(probs, axis=1) == y))


def holdout_split(n, val_fraction, rng):
    """Seeded train/validation index split; both sides get at least one item."""
    if n < 2:
        raise ValueError("need at least two seen images to hold out a validation set")
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    order = rng.permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _log_line(it, loss, acc):
    return (f"iter={it} classify={loss.classify:.6f} align={loss.align:.6f} "
            f"guide={loss.guide:.6f} total={loss.total:.6f} val_acc={acc:.6f}")


def train(features, y, table, sga_cfg, cfg=None, log=None, model=None):
    """Train on seen-class images.

    ``features`` is ``(N, p, m)``, ``y`` indexes columns of the seen-class
    ``table``. A seeded ``cfg.val_fraction`` of the images is held out for
    early stopping on validation accuracy. Returns the parameters from the
    best validation iteration and a :class:`TrainReport`. ``log`` may be a
    writable file object; one line is written per iteration.
    """
    cfg = cfg or TrainConfig()
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if features.shape[0] == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    tr_idx, val_idx = holdout_split(features.shape[0], cfg.val_fraction, rng)
    x_tr, y_tr = features[tr_idx], y[tr_idx]
    x_val, y_val = features[val_idx], y[val_idx]

    model = model.copy() if model is not None else init_model(sga_cfg, seed=cfg.seed)
    model.check()
    flat = model.flatten()
    state = np.zeros_like(flat)
    names = _block_slices(model)

    report = TrainReport()
    best = model.copy()
    stale = 0
    batch = min(cfg.batch_size, x_tr.shape[0])
    order, pos = rng.permutation(x_tr.shape[0]), 0
    start = time.perf_counter()
    for it in range(1, cfg.max_iterations + 1):
        if pos + batch > order.size:
            order, pos = rng.permutation(x_tr.shape[0]), 0
        idx = order[pos:pos + batch]
        pos += batch

        loss, grads = loss_and_grads(model, x_tr[idx], y_tr[idx], table, cfg.lam_align, cfg.lam_guide)
        g = grads.flatten()
        for name, sl in names:
            flat[sl], state[sl] = rmsprop_step(flat[sl], g[sl], state[sl], cfg, name)
        model = model.with_flat(flat)

        acc = seen_accuracy(model, x_val, y_val, table)
        report.history.append(loss)
        report.val_accuracy.append(acc)
        if log is not None:
            print(_log_line(it, loss, acc), file=log)
        if acc > report.best_val_accuracy:
            report.best_val_accuracy, report.best_iteration = acc, it
            best = model.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                report.stop_reason = "early-stop"
                break
    report.seconds = time.perf_counter() - start
    return best, report


def _block_slices(model):
    out, pos = [], 0
    for name, value in model.blocks():
        n = int(np.size(value))
        out.append((name, slice(pos, pos + n)))
        pos += n
    return out


@dataclass
class GradCheckReport:
    errors: dict  # block name -> relative error
    tolerance: float

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors.values()) or math.isinf(self.tolerance)


def block_relative_error(analytic, numeric, floor=1e-4):
    """``||a - n|| / max(||a||, ||n||, floor)`` for one parameter block."""
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor))


def grad_check(sga_cfg, trials=1, tolerance=1e-5, batch=4, num_classes=3, eps=1e-6, seed=0,
               lam_align=1.0, lam_guide=1.0):
    """Compare the analytic gradient of the joint loss with central differences.

    Each trial draws a random model, batch and class table. The reported
    error for a block is the worst over trials. Failures are reported, not
    raised.
    """
    rng = np.random.default_rng(seed)
    errors = {}
    for t in range(trials):
        model = init_model(sga_cfg, seed=int(rng.integers(2**31)))
        flat = model.flatten() + rng.normal(0.0, 0.3, model.flatten().size)
        model = model.with_flat(flat)
        table = ClassSemanticTable(list(range(num_classes)), rng.uniform(0.0, 1.0, (sga_cfg.q, num_classes)))
        x = rng.uniform(0.0, 1.0, (batch, sga_cfg.p, sga_cfg.m))
        y = rng.integers(0, num_classes, batch)
        _, grads = loss_and_grads(model, x, y, table, lam_align, lam_guide)

        def objective(w):
            return loss_and_grads(model.with_flat(w), x, y, table, lam_align, lam_guide, need_grads=False)[0].total

        numeric = finite_diff_grad(objective, flat, eps)
        analytic = grads.flatten()
        for name, sl in _block_slices(model):
            err = block_relative_error(analytic[sl], numeric[sl])
            errors[name] = max(errors.get(name, 0.0), err)
    return GradCheckReport(errors, tolerance)
