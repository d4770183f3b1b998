"""Dataset model, text file format, synthetic generator, PCA and taxonomy splits.

File format (UTF-8 text, one record per line)::

    ZSLDS v1 p=<p> m=<m> q=<q>
    CLASS <id> <parent-id or -> <q comma-separated reals>
    IMAGE <id> <class-id> <m*p comma-separated reals, region-major>
    SPLIT SEEN <ids...>
    SPLIT UNSEEN <ids...>

Reals are written with 9 significant digits and records are sorted, so
saving the same dataset twice gives identical bytes.
"""
import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from s2ga.matcher import ClassSemanticTable

MAGIC = "ZSLDS v1"
NO_PARENT = "-"


class DatasetFormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}: line {lineno}: {msg}")
        self.lineno = lineno


def id_key(x):
    """Sort key putting numeric ids in numeric order before other ids."""
    s = str(x)
    return (0, int(s), "") if re.fullmatch(r"-?\d+", s) else (1, 0, s)


def round9(a):
    """Round to the 9 significant digits the file format keeps."""
    a = np.asarray(a, dtype=np.float64)
    return np.array([float(format(v, ".9g")) for v in a.ravel()]).reshape(a.shape)


@dataclass
class ZslDataset:
    image_ids: list
    features: np.ndarray  # (N, p, m); column i of features[n] is region i
    labels: list  # class id per image
    classes: ClassSemanticTable
    parents: dict  # class id -> parent id or None
    seen: list
    unseen: list
    # generator ground truth, only present for synthetic data held in memory
    signal_mask: np.ndarray = field(default=None, repr=False)
    generator: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.validate()

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def m(self):
        return self.features.shape[2]

    @property
    def q(self):
        return self.classes.q

    def validate(self):
        if self.features.ndim != 3 or self.features.shape[0] != len(self.image_ids):
            raise ValueError(f"features {self.features.shape} do not match {len(self.image_ids)} images")
        if len(self.labels) != len(self.image_ids):
            raise ValueError("one label per image required")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("duplicate image ids")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite region features")
        known = set(self.classes.labels)
        seen, unseen = set(self.seen), set(self.unseen)
        if seen & unseen:
            raise ValueError(f"classes in both splits: {sorted(seen & unseen, key=id_key)}")
        if not (seen | unseen) <= known:
            raise ValueError(f"split names unknown classes: {sorted((seen | unseen) - known, key=id_key)}")
        for lab in set(self.labels):
            if lab not in known:
                raise ValueError(f"image labelled with unknown class {lab}")
            if lab not in seen and lab not in unseen:
                raise ValueError(f"class {lab} has images but is in neither split")

    def table(self, class_ids):
        return self.classes.subset(list(class_ids))

    def seen_table(self):
        return self.table(self.seen)

    def unseen_table(self):
        return self.table(self.unseen)

    def select(self, class_ids):
        """Images of the given classes as ``(features, y, mask)``.

        ``y`` indexes ``class_ids``; ``mask`` selects the images from the
        full dataset.
        """
        pos = {c: i for i, c in enumerate(class_ids)}
        mask = np.array([lab in pos for lab in self.labels], dtype=bool)
        y = np.array([pos[lab] for lab in self.labels if lab in pos], dtype=np.intp)
        return self.features[mask], y, mask

    def with_split(self, seen, unseen):
        return ZslDataset(self.image_ids, self.features, self.labels, self.classes, self.parents,
                          list(seen), list(unseen), self.signal_mask, self.generator)


def _fmt(values):
    return ",".join(format(float(v), ".9g") for v in np.ravel(values))


def save_dataset(ds, path):
    order_c = sorted(range(ds.classes.num_classes), key=lambda i: id_key(ds.classes.labels[i]))
    order_i = sorted(range(len(ds.image_ids)), key=lambda i: id_key(ds.image_ids[i]))
    lines = [f"{MAGIC} p={ds.p} m={ds.m} q={ds.q}"]
    for i in order_c:
        c = ds.classes.labels[i]
        parent = ds.parents.get(c)
        lines.append(f"CLASS {c} {NO_PARENT if parent is None else parent} {_fmt(ds.classes.semantics[:, i])}")
    for i in order_i:
        # region-major: all p values of region 0, then region 1, ...
        lines.append(f"IMAGE {ds.image_ids[i]} {ds.labels[i]} {_fmt(ds.features[i].T)}")
    lines.append(" ".join(["SPLIT", "SEEN"] + sorted(map(str, ds.seen), key=id_key)))
    lines.append(" ".join(["SPLIT", "UNSEEN"] + sorted(map(str, ds.unseen), key=id_key)))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def _reals(path, lineno, text, n, what):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise DatasetFormatError(path, lineno, f"{what}: unparsable number") from None
    if len(vals) != n:
        raise DatasetFormatError(path, lineno, f"{what}: expected {n} values, found {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise DatasetFormatError(path, lineno, f"{what}: non-finite value")
    return vals


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise DatasetFormatError(path, 1, "empty file")
    m_head = re.fullmatch(r"ZSLDS v1 p=(\d+) m=(\d+) q=(\d+)", raw[0].strip())
    if not m_head:
        raise DatasetFormatError(path, 1, "malformed header, expected 'ZSLDS v1 p=<p> m=<m> q=<q>'")
    p, m, q = (int(g) for g in m_head.groups())
    if min(p, m, q) < 1:
        raise DatasetFormatError(path, 1, "dimensions must be >= 1")

    class_ids, sems, parents = [], [], {}
    image_ids, feats, labels = [], [], []
    splits = {}
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        kind = line.split(" ", 1)[0]
        if kind == "CLASS":
            parts = line.split(" ")
            if len(parts) != 4:
                raise DatasetFormatError(path, lineno, "CLASS needs id, parent and values")
            _, cid, parent, vals = parts
            if cid in parents:
                raise DatasetFormatError(path, lineno, f"duplicate class id {cid}")
            sems.append(_reals(path, lineno, vals, q, f"class {cid}"))
            class_ids.append(cid)
            parents[cid] = None if parent == NO_PARENT else parent
        elif kind == "IMAGE":
            parts = line.split(" ")
            if len(parts) != 4:
                raise DatasetFormatError(path, lineno, "IMAGE needs id, class and values")
            _, iid, cid, vals = parts
            if cid not in parents:
                raise DatasetFormatError(path, lineno, f"image {iid} refers to unknown class {cid}")
            arr = np.array(_reals(path, lineno, vals, m * p, f"image {iid}")).reshape(m, p).T
            image_ids.append(iid)
            feats.append(arr)
            labels.append(cid)
        elif kind == "SPLIT":
            parts = line.split(" ")
            if len(parts) < 2 or parts[1] not in ("SEEN", "UNSEEN") or parts[1] in splits:
                raise DatasetFormatError(path, lineno, "expected a single 'SPLIT SEEN' and 'SPLIT UNSEEN' line")
            for cid in parts[2:]:
                if cid not in parents:
                    raise DatasetFormatError(path, lineno, f"split names unknown class {cid}")
            splits[parts[1]] = parts[2:]
        else:
            raise DatasetFormatError(path, lineno, f"unknown record type {kind!r}")
    if set(splits) != {"SEEN", "UNSEEN"}:
        raise DatasetFormatError(path, len(raw), "missing SPLIT SEEN or SPLIT UNSEEN line")
    features = np.array(feats).reshape(len(feats), p, m)
    table = ClassSemanticTable(class_ids, np.array(sems).reshape(len(class_ids), q).T)
    try:
        return ZslDataset(image_ids, features, labels, table, parents, splits["SEEN"], splits["UNSEEN"])
    except ValueError as exc:
        raise DatasetFormatError(path, len(raw), str(exc)) from None


@dataclass
class SynthSpec:
    """Parameters of the synthetic fine-grained benchmark.

    Each image has ``m`` regions; ``signal_regions`` of them (placed at
    random) carry the class semantic vector through a fixed affine map, the
    rest are clutter drawn from the same map applied to class-independent
    random semantics. Every region gets Gaussian noise of scale
    ``noise_sigma``.
    """

    num_classes: int = 20
    images_per_class: int = 30
    p: int = 24
    m: int = 6
    q: int = 10
    signal_regions: int = 2
    noise_sigma: float = 0.3
    seed: int = 0
    class_spread: float = 0.15
    signal_scale: float = 2.0
    offset: float = 2.0
    unseen_fraction: float = 0.25
    split: str = "scs"

    def __post_init__(self):
        if min(self.num_classes, self.images_per_class, self.p, self.m, self.q) < 1:
            raise ValueError("num_classes, images_per_class, p, m and q must be >= 1")
        if not 1 <= self.signal_regions <= self.m:
            raise ValueError(f"signal_regions must lie in [1, m={self.m}], got {self.signal_regions}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.split not in ("scs", "sce", "random"):
            raise ValueError(f"unknown split kind {self.split!r}")


def _assign_parents(sem, n_groups, rng):
    """k-means over class semantic vectors; returns compact group labels."""
    if n_groups <= 1:
        return np.zeros(sem.shape[0], dtype=int)
    _, lab = kmeans2(sem, n_groups, minit="++", seed=rng)
    _, lab = np.unique(lab, return_inverse=True)
    return lab


def synth_generate(spec):
    rng = np.random.default_rng(spec.seed)
    C, q, p, m = spec.num_classes, spec.q, spec.p, spec.m
    n_groups = max(1, int(round(math.sqrt(C))))

    centers = rng.uniform(0.0, 1.0, (n_groups, q))
    group = rng.permutation(np.arange(C) % n_groups)
    sem = np.clip(centers[group] + spec.class_spread * rng.standard_normal((C, q)), 0.0, 1.0)
    sem = round9(sem)
    parent_lab = _assign_parents(sem, n_groups, rng)

    gen_map = spec.signal_scale * rng.standard_normal((p, q)) / math.sqrt(q)
    offset = np.full(p, spec.offset)

    n = C * spec.images_per_class
    labels_idx = np.repeat(np.arange(C), spec.images_per_class)
    mask = np.zeros((n, m), dtype=bool)
    for i in range(n):
        mask[i, rng.choice(m, spec.signal_regions, replace=False)] = True
    clutter = rng.uniform(0.0, 1.0, (n, m, q))
    region_sem = np.where(mask[:, :, None], sem[labels_idx][:, None, :], clutter)
    noise = rng.standard_normal((n, m, p))
    regions = region_sem @ gen_map.T + offset + spec.noise_sigma * noise
    features = round9(np.transpose(regions, (0, 2, 1)))

    class_ids = [f"c{c:03d}" for c in range(C)]
    parents = {cid: f"g{parent_lab[c]}" for c, cid in enumerate(class_ids)}
    table = ClassSemanticTable(class_ids, sem.T)
    ds = ZslDataset(
        image_ids=[f"i{i:05d}" for i in range(n)],
        features=features,
        labels=[class_ids[c] for c in labels_idx],
        classes=table,
        parents=parents,
        seen=class_ids,
        unseen=[],
        signal_mask=mask,
        generator=(gen_map, offset),
    )
    split_rng = np.random.default_rng([spec.seed, 1])
    if spec.split == "scs":
        return split_scs(ds, spec.unseen_fraction, split_rng)
    if spec.split == "sce":
        return split_sce(ds, spec.unseen_fraction, split_rng)
    return split_random(ds, spec.unseen_fraction, split_rng)


def decode_oracle_accuracy(ds):
    """Nearest-class accuracy from signal regions decoded through the generating map.

    Inverts the known affine generator by least squares and assigns each
    signal region to the class with the closest semantic vector. Needs the
    in-memory ground truth of a synthetic dataset.
    """
    if ds.generator is None or ds.signal_mask is None:
        raise ValueError("dataset carries no generator ground truth")
    gen_map, offset = ds.generator
    pinv = np.linalg.pinv(gen_map)
    sem = ds.classes.semantics.T
    correct = total = 0
    for i, lab in enumerate(ds.labels):
        true = ds.classes.index(lab)
        for r in np.flatnonzero(ds.signal_mask[i]):
            s_hat = pinv @ (ds.features[i][:, r] - offset)
            pred = int(np.argmin(np.sum((sem - s_hat) ** 2, axis=1)))
            correct += pred == true
            total += 1
    return correct / total


def _n_unseen(n_classes, fraction):
    return min(n_classes - 1, max(1, int(round(fraction * n_classes))))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _groups(ds):
    groups = {}
    for cid in ds.classes.labels:
        parent = ds.parents.get(cid)
        if parent is None:
            raise ValueError(f"class {cid} has no parent category")
        groups.setdefault(parent, []).append(cid)
    return groups


def _finish(ds, unseen):
    unseen = sorted(unseen, key=id_key)
    seen = sorted((c for c in ds.classes.labels if c not in set(unseen)), key=id_key)
    return ds.with_split(seen, unseen)


def split_random(ds, unseen_fraction=0.25, rng=0):
    rng = _rng(rng)
    ids = list(ds.classes.labels)
    k = _n_unseen(len(ids), unseen_fraction)
    return _finish(ds, [ids[i] for i in rng.choice(len(ids), k, replace=False)])


def split_scs(ds, unseen_fraction=0.25, rng=0):
    """Unseen classes each keep at least one seen sibling under their parent."""
    rng = _rng(rng)
    groups = _groups(ds)
    k = _n_unseen(ds.classes.num_classes, unseen_fraction)
    # every parent can give up all but one of its classes
    slots = [c for parent in sorted(groups, key=id_key)
             for c in rng.permutation(groups[parent])[1:].tolist()]
    if len(slots) < k:
        raise ValueError(f"parent structure allows at most {len(slots)} shared-parent unseen classes, need {k}")
    return _finish(ds, [slots[i] for i in rng.choice(len(slots), k, replace=False)])


def split_sce(ds, unseen_fraction=0.25, rng=0):
    """Hold out whole parent categories so no unseen parent has a seen child.

    Picks the set of parents whose class count is closest to the requested
    unseen fraction, breaking ties at random.
    """
    rng = _rng(rng)
    groups = _groups(ds)
    parents = sorted(groups, key=id_key)
    if len(parents) < 2:
        raise ValueError("need at least two parent categories for an exclusive split")
    k = _n_unseen(ds.classes.num_classes, unseen_fraction)
    sizes = [len(groups[g]) for g in parents]
    candidates, best = [], None
    if len(parents) <= 16:
        subsets = (s for r in range(1, len(parents)) for s in itertools.combinations(range(len(parents)), r))
    else:
        order = rng.permutation(len(parents))
        subsets = (tuple(order[:r]) for r in range(1, len(parents)))
    for subset in subsets:
        gap = abs(sum(sizes[i] for i in subset) - k)
        if best is None or gap < best:
            best, candidates = gap, [subset]
        elif gap == best:
            candidates.append(subset)
    chosen = candidates[int(rng.integers(len(candidates)))]
    return _finish(ds, [c for i in chosen for c in groups[parents[i]]])


def is_scs(ds):
    seen_parents = {ds.parents[c] for c in ds.seen}
    return all(ds.parents[c] in seen_parents for c in ds.unseen)


def is_sce(ds):
    seen_parents = {ds.parents[c] for c in ds.seen}
    return not any(ds.parents[c] in seen_parents for c in ds.unseen)


@dataclass
class PcaBasis:
    mean: np.ndarray  # (q,)
    components: np.ndarray  # (q, k), orthonormal columns
    variances: np.ndarray  # (k,), sample variance along each component

    def project(self, vectors):
        return self.components.T @ (np.asarray(vectors, float) - self.mean[:, None])

    def reconstruct(self, reduced):
        return self.components @ reduced + self.mean[:, None]


def pca_reduce(vectors, target_dim):
    """Project the columns of a ``q x C`` matrix onto its top principal directions.

    Uses the SVD of the centred data. Each component is signed so its
    largest-magnitude entry is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    q, n = x.shape
    if not 1 <= target_dim <= min(q, n):
        raise ValueError(f"target_dim must lie in [1, min(q, C)={min(q, n)}], got {target_dim}")
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    u, sv, _ = np.linalg.svd(xc, full_matrices=False)
    comps = u[:, :target_dim].copy()
    for j in range(target_dim):
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] *= -1.0
    variances = sv[:target_dim] ** 2 / max(n - 1, 1)
    basis = PcaBasis(mean, comps, variances)
    return basis.project(x), basis


def reduce_semantics(ds, target_dim):
    """Dataset copy with class semantics replaced by their PCA projection."""
    reduced, _ = pca_reduce(ds.classes.semantics, target_dim)
    table = ClassSemanticTable(list(ds.classes.labels), round9(reduced))
    return ZslDataset(ds.image_ids, ds.features, ds.labels, table, ds.parents, ds.seen, ds.unseen)
