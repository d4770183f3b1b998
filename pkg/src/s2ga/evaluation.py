"""Zero-shot classification by nearest class embedding, and retrieval mAP."""
import math
from dataclasses import dataclass, field

import numpy as np

from s2ga.matcher import embed_all, embed_semantic

DEPTH_RATIOS = {"fifty_percent": 0.5, "hundred_percent": 1.0}


def distances(u, candidates, metric="euclidean"):
    """Distances from rows of ``u`` (B, p) to columns of ``candidates`` (p, C)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.asarray(candidates, dtype=np.float64)
    if metric == "euclidean":
        diff = u[:, :, None] - v[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=1))
    if metric == "cosine":
        nu = np.linalg.norm(u, axis=1, keepdims=True)
        nv = np.linalg.norm(v, axis=0, keepdims=True)
        return 1.0 - (u @ v) / np.maximum(nu * nv, 1e-300)
    raise ValueError(f"unknown distance {metric!r}")


def classify_zero_shot(u_t, table, matcher, metric="euclidean"):
    """Index of the candidate class whose embedding is nearest to ``u_t``.

    A batch ``(B, p)`` gives an index array. Ties go to the lowest index.
    """
    if table.num_classes == 0:
        raise ValueError("no candidate classes")
    u_t = np.asarray(u_t, dtype=np.float64)
    pred = np.argmin(distances(u_t, embed_all(table, matcher), metric), axis=1)
    return int(pred[0]) if u_t.ndim == 1 else pred


@dataclass
class EvalResult:
    top1_accuracy: float  # micro: correct / total
    macro_accuracy: float  # mean of per-class accuracies
    per_class: dict
    confusion: np.ndarray  # rows true class, columns predicted
    labels: list = field(default_factory=list)


def accuracy_from_predictions(pred, y, labels):
    pred, y = np.asarray(pred, dtype=np.intp), np.asarray(y, dtype=np.intp)
    n = len(labels)
    if np.any(y < 0) or np.any(y >= n):
        raise ValueError("test label outside the candidate set")
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    correct = int(np.trace(confusion))
    per_class = {}
    for c in range(n):
        count = int(confusion[c].sum())
        if count:
            per_class[labels[c]] = confusion[c, c] / count
    macro = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalResult(correct / len(y) if len(y) else 0.0, macro, per_class, confusion, list(labels))


def evaluate_accuracy(model, features, y, table, metric="euclidean"):
    """Zero-shot accuracy of ``model`` over images whose labels index ``table``."""
    y = np.asarray(y, dtype=np.intp)
    if np.any(y < 0) or np.any(y >= table.num_classes):
        raise ValueError("test label outside the candidate set")
    pred = classify_zero_shot(model.represent(features), table, model.matcher, metric)
    return accuracy_from_predictions(np.atleast_1d(pred), y, table.labels)


def rank_images(query, pool, matcher):
    """Pool indices by ascending distance to the embedded query (stable)."""
    q_emb = embed_semantic(query, matcher)
    d = distances(pool, q_emb[:, None])[:, 0]
    return np.argsort(d, kind="stable")


def retrieval_depth(count, depth_mode):
    return max(1, math.ceil(DEPTH_RATIOS[depth_mode] * count))


def average_precision(relevant, depth):
    """Mean precision at each relevant hit among the first ``depth`` results.

    ``relevant`` is a boolean array in ranked order. No hits gives 0.
    """
    rel = np.asarray(relevant, dtype=bool)[:depth]
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precision = np.cumsum(rel)[hits] / (hits + 1.0)
    return float(precision.mean())


@dataclass
class RetrievalResult:
    per_query: dict
    mean_ap: float
    depth_mode: str


def retrieval_map(query_embeddings, query_labels, pool, pool_labels, depth_mode):
    """Retrieval mAP of class queries over a pool of image representations.

    ``query_embeddings`` is ``(p, Q)`` (classes already embedded in visual
    space), ``pool`` is ``(N, p)``. Query j retrieves the ``ceil(ratio * n_j)``
    nearest pool items, ``n_j`` being the number of its images in the pool.
    """
    if depth_mode not in DEPTH_RATIOS:
        raise ValueError(f"depth_mode must be one of {sorted(DEPTH_RATIOS)}")
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    pool_labels = np.asarray(pool_labels)
    dist = distances(pool, query_embeddings)
    per_query = {}
    for j, lab in enumerate(query_labels):
        relevant = pool_labels == lab
        count = int(relevant.sum())
        if count == 0:
            raise ValueError(f"class {lab} has no images in the retrieval pool")
        order = np.argsort(dist[:, j], kind="stable")
        per_query[lab] = average_precision(relevant[order], retrieval_depth(count, depth_mode))
    mean_ap = float(np.mean(list(per_query.values()))) if per_query else 0.0
    return RetrievalResult(per_query, mean_ap, depth_mode)


def model_retrieval(model, query_table, pool_features, pool_labels, depth_mode):
    pool = model.represent(pool_features)
    return retrieval_map(embed_all(query_table, model.matcher), query_table.labels, pool,
                         pool_labels, depth_mode)


def write_metrics(path, metrics):
    """Write ``key=value`` lines in the given order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in metrics.items():
            fh.write(f"{key}={format_value(value)}\n")


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    return str(value)


def read_metrics(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key] = value
    return out
