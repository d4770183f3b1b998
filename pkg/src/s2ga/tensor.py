"""Dense double-precision helpers and a finite-difference gradient oracle.

Matrices and vectors are plain float64 numpy arrays. The functions here add
the shape checks and the numerically stable forms the model relies on.
"""
import numpy as np


class ShapeError(ValueError):
    pass


def as_array(x):
    return np.asarray(x, dtype=np.float64)


def matmul(a, b):
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def relu(x):
    return np.maximum(as_array(x), 0.0)


def relu_grad(pre):
    # subgradient at exactly 0 is taken as 0
    return (pre > 0.0).astype(np.float64)


def tanh_map(x):
    return np.tanh(as_array(x))


def softmax(z, axis=-1):
    z = as_array(z)
    if z.shape[axis] < 1:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def col_broadcast_mul(m, v):
    """Multiply every column of ``m`` elementwise by ``v``.

    Leading batch axes are allowed: ``m`` of shape (..., d, k) pairs with
    ``v`` of shape (..., d).
    """
    m, v = as_array(m), as_array(v)
    if m.ndim < 2 or m.shape[-2] != v.shape[-1] or m.shape[:-2] != v.shape[:-1]:
        raise ShapeError(f"column broadcast needs rows {m.shape} to match vector {v.shape}")
    return m * v[..., :, None]


def finite_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_array(x).copy()
    grad = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_relative_error(a, b, floor=1e-8):
    """Largest elementwise |a-b| / max(|a|, |b|, floor)."""
    a, b = as_array(a), as_array(b)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
