import math

import numpy as np

from s2ga.matcher import ClassSemanticTable


def separable_problem(per_class=20, seed=0, noise=0.05):
    """Three well-separated classes: q=3 one-hot semantics, p=6, m=2."""
    g = np.random.default_rng(seed)
    sem = np.eye(3) * 0.8 + 0.1
    table = ClassSemanticTable([0, 1, 2], sem)
    y = np.repeat(np.arange(3), per_class)
    base = np.concatenate([sem[:, y], 1.0 - sem[:, y]], axis=0).T  # (N, 6)
    x = np.stack([base, base], axis=2) + noise * g.normal(size=(len(y), 6, 2))
    return x, y, table


def brute_force_map(queries, query_labels, pool, pool_labels, ratio):
    """Independent AP oracle: explicit distance loops and a sorted list of tuples."""
    aps = []
    for j, lab in enumerate(query_labels):
        q = [queries[r][j] for r in range(len(queries))]
        scored = []
        for i, item in enumerate(pool):
            scored.append((math.sqrt(sum((a - b) ** 2 for a, b in zip(item, q))), i))
        scored.sort()
        n_rel = sum(1 for l in pool_labels if l == lab)
        depth = max(1, math.ceil(ratio * n_rel))
        hits, precisions = 0, []
        for pos, (_, i) in enumerate(scored[:depth], start=1):
            if pool_labels[i] == lab:
                hits += 1
                precisions.append(hits / pos)
        aps.append(sum(precisions) / len(precisions) if precisions else 0.0)
    return sum(aps) / len(aps)
