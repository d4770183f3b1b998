"""Semantics-guided attention layers and their stacking.

Every function accepts a single image (regions as a ``(p, m)`` matrix) or a
batch with a leading axis ``(B, p, m)``; the batched form is what training
uses.
"""
from dataclasses import dataclass, field

import numpy as np

from s2ga.tensor import (
    ShapeError,
    as_array,
    col_broadcast_mul,
    relu,
    relu_grad,
    softmax,
    tanh_map,
)


@dataclass(frozen=True)
class SgaConfig:
    p: int
    m: int
    q: int
    d: int = 128
    k_layers: int = 2

    def __post_init__(self):
        for name in ("p", "m", "q", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.k_layers < 0:
            raise ValueError("k_layers must be >= 0")


@dataclass
class SgaLayerParams:
    w_ia: np.ndarray  # d x p, local embedding
    w_gs: np.ndarray  # q x p, guide to semantic space
    w_ga: np.ndarray  # d x q, semantic space to latent
    w_p: np.ndarray  # 1 x d, attention projection shared by all regions
    b_p: float = 0.0

    FIELDS = ("w_ia", "w_gs", "w_ga", "w_p", "b_p")

    def check(self, cfg):
        expected = {
            "w_ia": (cfg.d, cfg.p),
            "w_gs": (cfg.q, cfg.p),
            "w_ga": (cfg.d, cfg.q),
            "w_p": (1, cfg.d),
        }
        for name, shape in expected.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, expected {shape}")

    def copy(self):
        return SgaLayerParams(
            self.w_ia.copy(), self.w_gs.copy(), self.w_ga.copy(), self.w_p.copy(), float(self.b_p)
        )


@dataclass
class AttentionTrace:
    """Per-layer record of a forward pass.

    ``probs[k]`` is the attention over regions at layer k, ``refined[k]`` the
    region matrix after the residual reweighting, ``guide_mid[k]`` the
    semantic-space output of the guide network and ``fused[k]`` the pooled
    vector that fed it. ``cache`` holds what the backward pass needs.
    """

    regions: np.ndarray
    probs: list = field(default_factory=list)
    refined: list = field(default_factory=list)
    guide_mid: list = field(default_factory=list)
    fused: list = field(default_factory=list)
    cache: list = field(default_factory=list, repr=False)

    @property
    def n_layers(self):
        return len(self.probs)


def glorot(rng, rows, cols):
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_layer(cfg, rng):
    return SgaLayerParams(
        w_ia=glorot(rng, cfg.d, cfg.p),
        w_gs=glorot(rng, cfg.q, cfg.p),
        w_ga=glorot(rng, cfg.d, cfg.q),
        w_p=glorot(rng, 1, cfg.d),
        b_p=0.0,
    )


def fuse_regions(u):
    """Pool regions into one vector by averaging the columns."""
    return as_array(u).mean(axis=-1)


def local_embed(u, w_ia):
    u, w_ia = as_array(u), as_array(w_ia)
    if w_ia.shape[1] != u.shape[-2]:
        raise ShapeError(f"w_ia {w_ia.shape} cannot embed regions {u.shape}")
    return relu(w_ia @ u)


def semantic_guide(v_g, w_gs, w_ga):
    """Return ``(latent, mid)`` of the two-stage guide network."""
    v_g = as_array(v_g)
    if w_gs.shape[1] != v_g.shape[-1] or w_ga.shape[1] != w_gs.shape[0]:
        raise ShapeError(f"guide weights {w_gs.shape}, {w_ga.shape} do not fit input {v_g.shape}")
    mid = relu(v_g @ w_gs.T)
    latent = relu(mid @ w_ga.T)
    return latent, mid


def _attention(u, v_g, params):
    # returns the intermediates that backward needs
    f_pre = params.w_ia @ u
    f = relu(f_pre)
    mid_pre = v_g @ params.w_gs.T
    mid = relu(mid_pre)
    lat_pre = mid @ params.w_ga.T
    lat = relu(lat_pre)
    h = tanh_map(col_broadcast_mul(f, lat))
    logits = params.w_p[0] @ h + params.b_p
    probs = softmax(logits, axis=-1)
    return probs, dict(f_pre=f_pre, f=f, mid_pre=mid_pre, mid=mid, lat_pre=lat_pre, lat=lat, h=h)


def attention_probs(u, v_g, params):
    """Attention distribution over the region columns of ``u``.

    Returns ``(probs, mid)``; ``mid`` is what the guide loss compares to the
    class semantic vector.
    """
    u, v_g = as_array(u), as_array(v_g)
    if params.w_ia.shape[1] != u.shape[-2] or v_g.shape[-1] != u.shape[-2]:
        raise ShapeError(f"regions {u.shape} / fused {v_g.shape} do not match w_ia {params.w_ia.shape}")
    probs, inter = _attention(u, v_g, params)
    return probs, inter["mid"]


def refine_regions(u, probs):
    """Residual reweighting: column i becomes ``u_i + probs_i * u_i``."""
    u = as_array(u)
    return u + u * as_array(probs)[..., None, :]


def sga_forward(v, cfg, layers):
    """Run ``cfg.k_layers`` attention layers over region matrix ``v``.

    Returns the final pooled representation and the trace. With no layers
    the representation is the plain mean of the regions.
    """
    v = as_array(v)
    if len(layers) != cfg.k_layers:
        raise ShapeError(f"expected {cfg.k_layers} layers, got {len(layers)}")
    if v.shape[-2:] != (cfg.p, cfg.m):
        raise ShapeError(f"regions of shape {v.shape[-2:]} do not match config (p={cfg.p}, m={cfg.m})")
    if not np.all(np.isfinite(v)):
        raise ValueError("region features must be finite")
    trace = AttentionTrace(regions=v)
    u = v
    for params in layers:
        u_g = fuse_regions(u)
        probs, inter = _attention(u, u_g, params)
        refined = refine_regions(u, probs)
        trace.probs.append(probs)
        trace.refined.append(refined)
        trace.guide_mid.append(inter["mid"])
        trace.fused.append(u_g)
        trace.cache.append(dict(inter, u=u))
        u = refined
    return fuse_regions(u), trace


def guide_loss(mid, s):
    """Squared L2 distance between the guide's semantic output and ``s``.

    Batched inputs give one loss per row.
    """
    mid, s = as_array(mid), as_array(s)
    if mid.shape[-1] != s.shape[-1]:
        raise ShapeError(f"guide output length {mid.shape[-1]} != semantic length {s.shape[-1]}")
    return np.sum((mid - s) ** 2, axis=-1)


def guide_loss_grad(mid, s):
    return 2.0 * (as_array(mid) - as_array(s))


def sga_backward(trace, layers, d_ug, d_mid=None):
    """Reverse pass through the stacked layers.

    ``d_ug`` is the upstream gradient w.r.t. the final representation and
    ``d_mid[k]`` (optional) the gradient w.r.t. layer k's guide output, which
    is how guide losses enter. Returns ``(layer_grads, d_regions)`` where
    ``layer_grads[k]`` is an :class:`SgaLayerParams` of gradients summed over
    the batch.
    """
    if trace is None or len(trace.cache) != len(layers):
        raise ValueError("sga_backward needs the trace from the matching forward pass")
    single = trace.regions.ndim == 2
    lift = (lambda x: as_array(x)[None]) if single else as_array
    d_ug = lift(d_ug)
    regions = lift(trace.regions)
    m = regions.shape[-1]
    d_u = np.broadcast_to(d_ug[:, :, None] / m, regions.shape).copy()
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        params = layers[k]
        c = {key: lift(val) for key, val in trace.cache[k].items()}
        u, probs, h, fused = c["u"], lift(trace.probs[k]), c["h"], lift(trace.fused[k])

        d_probs = np.sum(d_u * u, axis=-2)
        d_u = d_u * (1.0 + probs)[..., None, :]

        d_logits = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))
        d_b_p = float(np.sum(d_logits))
        d_w_p = np.tensordot(h, d_logits, axes=([0, 2], [0, 1]))[None, :]
        d_h = params.w_p[0][:, None] * d_logits[..., None, :]

        d_a = d_h * (1.0 - h * h)
        d_f = d_a * c["lat"][..., :, None]
        d_lat = np.sum(d_a * c["f"], axis=-1)

        d_f_pre = d_f * relu_grad(c["f_pre"])
        d_w_ia = np.tensordot(d_f_pre, u, axes=([0, 2], [0, 2]))
        d_u = d_u + params.w_ia.T @ d_f_pre

        d_lat_pre = d_lat * relu_grad(c["lat_pre"])
        d_w_ga = d_lat_pre.T @ c["mid"]
        d_mid_k = d_lat_pre @ params.w_ga
        if d_mid is not None and d_mid[k] is not None:
            d_mid_k = d_mid_k + lift(d_mid[k])

        d_mid_pre = d_mid_k * relu_grad(c["mid_pre"])
        d_w_gs = d_mid_pre.T @ fused
        d_fused = d_mid_pre @ params.w_gs
        d_u = d_u + d_fused[..., :, None] / m

        grads[k] = SgaLayerParams(d_w_ia, d_w_gs, d_w_ga, d_w_p, d_b_p)
    return grads, (d_u[0] if single else d_u)
