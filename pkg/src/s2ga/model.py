"""Full model: stacked attention followed by the matching head.

Also holds the joint objective, its analytic gradient, and the text model
file format.
"""
from dataclasses import dataclass

import numpy as np

from s2ga.matcher import LossBreakdown, MatcherParams, matcher_backward, matcher_forward
from s2ga.sga import (
    SgaConfig,
    SgaLayerParams,
    glorot,
    guide_loss,
    guide_loss_grad,
    init_layer,
    sga_backward,
    sga_forward,
)
from s2ga.tensor import ShapeError

MODEL_MAGIC = "S2GA v1"


@dataclass
class S2GAModel:
    cfg: SgaConfig
    layers: list
    matcher: MatcherParams

    def check(self):
        if len(self.layers) != self.cfg.k_layers:
            raise ShapeError(f"{len(self.layers)} layers for k_layers={self.cfg.k_layers}")
        for layer in self.layers:
            layer.check(self.cfg)
        self.matcher.check(self.cfg.p, self.cfg.q)

    def copy(self):
        return S2GAModel(self.cfg, [layer.copy() for layer in self.layers], self.matcher.copy())

    def represent(self, features):
        """Attended representation ``u_G`` for a batch ``(B, p, m)`` of images."""
        u_g, _ = sga_forward(features, self.cfg, self.layers)
        return u_g

    # flat-vector view, used by the optimizer and finite differences
    def blocks(self):
        out = []
        for k, layer in enumerate(self.layers):
            for name in SgaLayerParams.FIELDS:
                out.append((f"layer{k}.{name}", getattr(layer, name)))
        out.append(("matcher.w_e", self.matcher.w_e))
        out.append(("matcher.b_e", self.matcher.b_e))
        return out

    def flatten(self):
        return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for _, v in self.blocks()])

    def with_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            chunk = flat[pos:pos + n].reshape(shape)
            pos += n
            return chunk

        cfg = self.cfg
        layers = []
        for _ in self.layers:
            layers.append(SgaLayerParams(
                take((cfg.d, cfg.p)), take((cfg.q, cfg.p)), take((cfg.d, cfg.q)),
                take((1, cfg.d)), float(take(())),
            ))
        matcher = MatcherParams(take((cfg.p, cfg.q)), take((cfg.p,)))
        if pos != flat.size:
            raise ShapeError(f"flat vector of length {flat.size}, model needs {pos}")
        return S2GAModel(cfg, layers, matcher)


def init_model(cfg, seed=0, embed_bias=1.0):
    rng = np.random.default_rng(seed)
    layers = [init_layer(cfg, rng) for _ in range(cfg.k_layers)]
    matcher = MatcherParams(glorot(rng, cfg.p, cfg.q), np.full(cfg.p, float(embed_bias)))
    return S2GAModel(cfg, layers, matcher)


@dataclass
class Gradients:
    layers: list
    matcher: MatcherParams

    def blocks(self):
        return S2GAModel(None, self.layers, self.matcher).blocks()

    def flatten(self):
        return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for _, v in self.blocks()])


def _batch_semantics(table, y):
    return table.semantics[:, y].T


def total_loss(model, features, y, table, lam_align=1.0, lam_guide=1.0):
    """Batch-mean joint objective as a :class:`LossBreakdown`."""
    return forward_loss(model, features, y, table, lam_align, lam_guide)[0]


def forward_loss(model, features, y, table, lam_align=1.0, lam_guide=1.0):
    """Joint objective plus the forward state needed for gradients.

    Per example: cross-entropy over the seen classes, plus ``lam_align``
    times the alignment loss against the true class embedding, plus
    ``lam_guide`` times the guide losses summed over layers. The batch mean
    is returned. The state tuple is ``(trace, matcher_state, s_y)``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[None]
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if table.q != model.cfg.q:
        raise ShapeError(f"semantic dimension {table.q} != model q={model.cfg.q}")
    u_g, trace = sga_forward(features, model.cfg, model.layers)
    ce, al, state = matcher_forward(u_g, y, table, model.matcher, lam_align)
    s_y = _batch_semantics(table, y)
    guide = np.zeros(n)
    for mid in trace.guide_mid:
        guide += guide_loss(mid, s_y)
    classify, align, guide_total = float(ce.mean()), float(al.mean()), float(guide.mean())
    breakdown = LossBreakdown(
        classify=classify,
        align=align,
        guide=guide_total,
        total=classify + lam_align * align + lam_guide * guide_total,
        weights=(lam_align, lam_guide),
    )
    return breakdown, (trace, state, s_y)


def loss_and_grads(model, features, y, table, lam_align=1.0, lam_guide=1.0, need_grads=True):
    """Joint objective and its exact gradient as a :class:`Gradients`."""
    breakdown, (trace, state, s_y) = forward_loss(model, features, y, table, lam_align, lam_guide)
    if not need_grads:
        return breakdown, None
    scale = 1.0 / state.u_g.shape[0]
    m_grads, d_ug = matcher_backward(state, scale)
    d_mid = [lam_guide * scale * guide_loss_grad(mid, s_y) for mid in trace.guide_mid]
    l_grads, _ = sga_backward(trace, model.layers, d_ug, d_mid)
    return breakdown, Gradients(l_grads, m_grads)


def _fmt(x):
    return format(float(x), ".17g")


def save_model(model, path):
    """Write the model as canonical text: a header line, then one line per block."""
    cfg = model.cfg
    lines = [f"{MODEL_MAGIC} p={cfg.p} m={cfg.m} q={cfg.q} d={cfg.d} k={cfg.k_layers}"]
    for name, value in model.blocks():
        arr = np.atleast_2d(np.asarray(value, dtype=np.float64))
        if name.endswith(".b_e"):
            arr = arr.reshape(1, -1)
        rows, cols = arr.shape
        lines.append(f"BLOCK {name} {rows} {cols} " + ",".join(_fmt(x) for x in arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: line 1: not a model file")
    try:
        dims = dict(tok.split("=") for tok in lines[0][len(MODEL_MAGIC):].split())
        cfg = SgaConfig(p=int(dims["p"]), m=int(dims["m"]), q=int(dims["q"]),
                        d=int(dims["d"]), k_layers=int(dims["k"]))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: line 1: bad header ({exc})") from None
    template = init_model(cfg)
    expected = template.blocks()
    if len(lines) - 1 != len(expected):
        raise ValueError(f"{path}: expected {len(expected)} parameter blocks, found {len(lines) - 1}")
    values = []
    for lineno, (line, (name, ref)) in enumerate(zip(lines[1:], expected), start=2):
        parts = line.split(" ", 4)
        if len(parts) != 5 or parts[0] != "BLOCK" or parts[1] != name:
            raise ValueError(f"{path}: line {lineno}: expected block {name}")
        rows, cols = int(parts[2]), int(parts[3])
        data = np.array([float(x) for x in parts[4].split(",")])
        if data.size != rows * cols or data.size != np.size(ref):
            raise ValueError(f"{path}: line {lineno}: block {name} has wrong size")
        values.append(data)
    return template.with_flat(np.concatenate(values))
