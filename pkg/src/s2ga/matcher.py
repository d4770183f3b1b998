"""Visual-semantic matching: class embeddings, alignment and classification losses."""
from dataclasses import dataclass

import numpy as np

from s2ga.tensor import ShapeError, as_array, relu, relu_grad, softmax


@dataclass
class MatcherParams:
    w_e: np.ndarray  # p x q
    b_e: np.ndarray  # p

    def check(self, p, q):
        if np.shape(self.w_e) != (p, q) or np.shape(self.b_e) != (p,):
            raise ShapeError(f"matcher shapes {np.shape(self.w_e)}, {np.shape(self.b_e)} do not fit p={p}, q={q}")

    def copy(self):
        return MatcherParams(self.w_e.copy(), self.b_e.copy())


@dataclass
class ClassSemanticTable:
    """Class semantic vectors stored as columns of a ``q x C`` matrix."""

    labels: list
    semantics: np.ndarray

    def __post_init__(self):
        self.semantics = as_array(self.semantics)
        if self.semantics.ndim != 2 or self.semantics.shape[1] != len(self.labels):
            raise ShapeError(f"{len(self.labels)} labels for semantics of shape {self.semantics.shape}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate class identifiers")
        if not np.all(np.isfinite(self.semantics)):
            raise ValueError("class semantic vectors must be finite")

    @property
    def num_classes(self):
        return len(self.labels)

    @property
    def q(self):
        return self.semantics.shape[0]

    def index(self, label):
        return self.labels.index(label)

    def subset(self, labels):
        cols = [self.index(c) for c in labels]
        return ClassSemanticTable(list(labels), self.semantics[:, cols])


@dataclass
class LossBreakdown:
    classify: float
    align: float
    guide: float
    total: float
    weights: tuple = (1.0, 1.0)


def embed_semantic(s, params):
    s = as_array(s)
    if params.w_e.shape[1] != s.shape[0]:
        raise ShapeError(f"w_e {params.w_e.shape} cannot embed a semantic vector of length {s.shape[0]}")
    if s.ndim == 1:
        return relu(params.w_e @ s + params.b_e)
    return relu(params.w_e @ s + params.b_e[:, None])


def embed_all(table, params):
    """Embed every class of ``table``; column c is class c in visual space."""
    return embed_semantic(table.semantics, params)


def align_loss(v_s, u_g):
    v_s, u_g = as_array(v_s), as_array(u_g)
    if v_s.shape[-1] != u_g.shape[-1]:
        raise ShapeError(f"embedding length {v_s.shape[-1]} != representation length {u_g.shape[-1]}")
    return np.sum((v_s - u_g) ** 2, axis=-1)


def class_scores(u_g, v_s_all):
    u_g, v_s_all = as_array(u_g), as_array(v_s_all)
    if v_s_all.shape[0] != u_g.shape[-1]:
        raise ShapeError(f"class embeddings {v_s_all.shape} do not fit representation {u_g.shape}")
    return u_g @ v_s_all


def class_probs(u_g, v_s_all):
    return softmax(class_scores(u_g, v_s_all), axis=-1)


def classify_loss(probs, true_class):
    probs = as_array(probs)
    if not 0 <= true_class < probs.shape[-1]:
        raise IndexError(f"class index {true_class} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[true_class], 1e-300)))


@dataclass
class MatcherState:
    u_g: np.ndarray
    y: np.ndarray
    pre_e: np.ndarray
    v_s_all: np.ndarray
    probs: np.ndarray
    semantics: np.ndarray
    lam_align: float
    d_v_s_all: np.ndarray = None  # filled by matcher_backward


def matcher_forward(u_g, y, table, params, lam_align=1.0):
    """Batched classification + alignment losses.

    ``u_g`` is ``(B, p)`` and ``y`` holds class indices into ``table``.
    Returns per-example ``(classify, align)`` arrays and the state for
    :func:`matcher_backward`.
    """
    u_g = np.atleast_2d(as_array(u_g))
    y = np.asarray(y, dtype=np.intp)
    if y.shape != (u_g.shape[0],):
        raise ShapeError(f"{y.shape[0]} labels for {u_g.shape[0]} representations")
    if np.any(y < 0) or np.any(y >= table.num_classes):
        raise IndexError("class index out of range")
    pre_e = params.w_e @ table.semantics + params.b_e[:, None]
    v_s_all = relu(pre_e)
    probs = class_probs(u_g, v_s_all)
    rows = np.arange(len(y))
    ce = -np.log(np.maximum(probs[rows, y], 1e-300))
    al = align_loss(v_s_all[:, y].T, u_g)
    state = MatcherState(u_g, y, pre_e, v_s_all, probs, table.semantics, lam_align)
    return ce, al, state


def matcher_backward(state, scale=1.0):
    """Gradients of ``scale * sum_b (classify_b + lam_align * align_b)``.

    Returns ``(MatcherParams of gradients, d_u_g)``.
    """
    if state is None:
        raise ValueError("matcher_backward needs the state from matcher_forward")
    u_g, y, v_s_all = state.u_g, state.y, state.v_s_all
    rows = np.arange(len(y))
    d_scores = state.probs.copy()
    d_scores[rows, y] -= 1.0
    d_scores *= scale
    d_u = d_scores @ v_s_all.T
    d_v = u_g.T @ d_scores

    diff = v_s_all[:, y].T - u_g
    coef = 2.0 * state.lam_align * scale
    d_u -= coef * diff
    np.add.at(d_v.T, y, coef * diff)

    state.d_v_s_all = d_v
    d_pre = d_v * relu_grad(state.pre_e)
    grads = MatcherParams(d_pre @ state.semantics.T, d_pre.sum(axis=1))
    return grads, d_u
