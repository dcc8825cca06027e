"""Layers with hand-written backward passes and the TaLK block.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(grad_out, cache)``. Parameters live in plain dicts of arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.special import expit as sigmoid

from .talk_kernel import ConfigError, TaLKConfig, talk_backward, talk_forward


# --- elementwise / affine -------------------------------------------------

def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(g, cache):
    x, w = cache
    g2 = g.reshape(-1, g.shape[-1])
    gw = x.reshape(-1, x.shape[-1]).T @ g2
    return g @ w.T, gw, g2.sum(axis=0)


def glu_forward(p):
    """Split the last axis into ``(a, gate)`` and return ``a * sigmoid(gate)``."""
    a, gate = np.split(p, 2, axis=-1)
    s = sigmoid(gate)
    return a * s, (a, s)


def glu_backward(g, cache):
    a, s = cache
    return np.concatenate([g * s, g * a * s * (1 - s)], axis=-1)


def swish_forward(x):
    s = sigmoid(x)
    return x * s, (x, s)


def swish_backward(g, cache):
    x, s = cache
    return g * (s + x * s * (1 - s))


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(g, cache):
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    g2 = g.reshape(-1, d)
    ggamma = (g2 * xhat.reshape(-1, d)).sum(axis=0)
    gbeta = g2.sum(axis=0)
    gx_hat = g * gamma
    gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
    return gx, ggamma, gbeta


def embedding_forward(ids, table):
    return table[ids], (ids, table.shape)


def embedding_backward(g, cache):
    ids, shape = cache
    V, d = shape
    flat = (ids.reshape(-1, 1) * d + np.arange(d)).ravel()
    out = np.bincount(flat, weights=g.reshape(-1), minlength=V * d)
    return out.reshape(V, d).astype(g.dtype, copy=False)


def softmax_xent_forward(logits, targets, mask):
    """Mean cross-entropy over positions where ``mask`` is 1."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    count = max(float(mask.sum()), 1.0)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float((nll * mask).sum() / count)
    return loss, (logp, targets, mask, count)


def softmax_xent_backward(cache):
    logp, targets, mask, count = cache
    g = np.exp(logp)
    np.put_along_axis(g, targets[..., None],
                      np.take_along_axis(g, targets[..., None], axis=-1) - 1, axis=-1)
    return g * (mask[..., None] / count)


# --- offsets ---------------------------------------------------------------

def _block_diag(w):
    """``[H, R, 2]`` per-head maps -> one ``[H*R, 2*H]`` block-diagonal matrix."""
    H, R, k = w.shape
    full = np.zeros((H * R, H * k), dtype=w.dtype)
    for h in range(H):
        full[h * R:(h + 1) * R, h * k:(h + 1) * k] = w[h]
    return full


def offsets_generate(x, w, b, heads):
    """Per-head affine map of the head's ``R`` channels to (left, right) logits,
    squashed by a sigmoid. ``w`` is ``[H, R, 2]``, ``b`` is ``[H, 2]``.

    Evaluated as one matmul against the block-diagonal expansion of ``w`` so
    the input is read in place.
    """
    B, n, d = x.shape
    if d % heads:
        raise ConfigError(f"heads={heads} must divide d={d}")
    wf = _block_diag(w)
    rel = sigmoid((x @ wf).reshape(B, n, heads, 2) + b)
    return rel, (x, wf, rel)


def offsets_backward(g, cache):
    x, wf, rel = cache
    B, n, H, _ = rel.shape
    R = x.shape[-1] // H
    glog = g * rel * (1 - rel)
    gb = glog.sum(axis=(0, 1))
    glog = glog.reshape(B, n, 2 * H)
    gx = glog @ wf.T
    gfull = x.reshape(-1, H * R).T @ glog.reshape(-1, 2 * H)
    gw = np.stack([gfull[h * R:(h + 1) * R, 2 * h:2 * h + 2] for h in range(H)])
    return gx, gw, gb


def offsets_dropout(rel, p, rng, training):
    """Zero each predicted offset with probability ``p`` (no rescaling, so
    offsets stay in ``[0, 1]``). Returns ``(out, keep)``; ``keep`` is None
    when the op is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"offsets dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return rel, None
    keep = rng.random(rel.shape) >= p
    return rel * keep, keep


def activation_dropout(x, p, rng, training):
    if not training or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


# --- block -----------------------------------------------------------------

@dataclass(frozen=True)
class BlockConfig:
    talk: TaLKConfig
    d_ff: int
    glu: bool = True
    causal: bool = False
    prenorm: bool = True
    dropout: float = 0.0

    @property
    def d(self) -> int:
        return self.talk.d


def init_block(cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
    d, H, R, f = cfg.d, cfg.talk.heads, cfg.talk.head_dim, cfg.d_ff

    def affine(fan_in, shape):
        lim = np.sqrt(1.0 / fan_in)
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    d_in = 2 * d if cfg.glu else d
    return {
        "ln1.g": np.ones(d, dtype), "ln1.b": np.zeros(d, dtype),
        "in.w": affine(d, (d, d_in)), "in.b": affine(d, (d_in,)),
        "off.w": affine(R, (H, R, 2)), "off.b": np.zeros((H, 2), dtype),
        "out.w": affine(d, (d, d)), "out.b": affine(d, (d,)),
        "ln2.g": np.ones(d, dtype), "ln2.b": np.zeros(d, dtype),
        "ff1.w": affine(d, (d, f)), "ff1.b": affine(d, (f,)),
        "ff2.w": affine(f, (f, d)), "ff2.b": affine(f, (d,)),
    }


@dataclass
class BlockSaved:
    caches: dict[str, Any] = field(default_factory=dict)


def talk_block_forward(x, params, cfg: BlockConfig, training=False, rng=None):
    """Pre-norm: ``y = x + Out(TaLK(GLU(In(LN1 x))))``, then ``y + FFN(LN2 y)``.
    Post-norm applies ``LN1``/``LN2`` after each residual sum instead."""
    c: dict[str, Any] = {}
    p = params
    tcfg = cfg.talk
    if cfg.causal and tcfg.r_max:
        tcfg = replace(tcfg, r_max=0)
    if training and rng is None and (tcfg.p_drop > 0 or cfg.dropout > 0):
        raise ValueError("training with dropout needs an rng")

    if cfg.prenorm:
        h, c["ln1"] = layernorm_forward(x, p["ln1.g"], p["ln1.b"])
    else:
        h = x
    h, c["in"] = linear_forward(h, p["in.w"], p["in.b"])
    if cfg.glu:
        h, c["glu"] = glu_forward(h)
    rel, c["off"] = offsets_generate(h, p["off.w"], p["off.b"], tcfg.heads)
    rel, c["offdrop"] = offsets_dropout(rel, tcfg.p_drop, rng, training)
    t, c["talk"] = talk_forward(h, rel, tcfg)
    t, c["out"] = linear_forward(t, p["out.w"], p["out.b"])
    t, c["drop1"] = activation_dropout(t, cfg.dropout, rng, training)
    y = x + t
    if not cfg.prenorm:
        y, c["ln1"] = layernorm_forward(y, p["ln1.g"], p["ln1.b"])

    if cfg.prenorm:
        f, c["ln2"] = layernorm_forward(y, p["ln2.g"], p["ln2.b"])
    else:
        f = y
    f, c["ff1"] = linear_forward(f, p["ff1.w"], p["ff1.b"])
    f, c["swish"] = swish_forward(f)
    f, c["ff2"] = linear_forward(f, p["ff2.w"], p["ff2.b"])
    f, c["drop2"] = activation_dropout(f, cfg.dropout, rng, training)
    z = y + f
    if not cfg.prenorm:
        z, c["ln2"] = layernorm_forward(z, p["ln2.g"], p["ln2.b"])
    c["cfg"] = cfg
    return z, BlockSaved(c)


def talk_block_backward(gz, saved: BlockSaved):
    c = saved.caches
    cfg: BlockConfig = c["cfg"]
    g: dict[str, np.ndarray] = {}

    if not cfg.prenorm:
        gz, g["ln2.g"], g["ln2.b"] = layernorm_backward(gz, c["ln2"])
    gy = gz
    gf = gz if c["drop2"] is None else gz * c["drop2"]
    gf, g["ff2.w"], g["ff2.b"] = linear_backward(gf, c["ff2"])
    gf = swish_backward(gf, c["swish"])
    gf, g["ff1.w"], g["ff1.b"] = linear_backward(gf, c["ff1"])
    if cfg.prenorm:
        gf, g["ln2.g"], g["ln2.b"] = layernorm_backward(gf, c["ln2"])
    gy = gy + gf

    if not cfg.prenorm:
        gy, g["ln1.g"], g["ln1.b"] = layernorm_backward(gy, c["ln1"])
    gx = gy
    gt = gy if c["drop1"] is None else gy * c["drop1"]
    gt, g["out.w"], g["out.b"] = linear_backward(gt, c["out"])
    gh, grel = talk_backward(gt, c["talk"])
    if c["offdrop"] is not None:
        grel = grel * c["offdrop"]
    gh_off, g["off.w"], g["off.b"] = offsets_backward(grel, c["off"])
    gh = gh + gh_off
    if cfg.glu:
        gh = glu_backward(gh, c["glu"])
    gh, g["in.w"], g["in.b"] = linear_backward(gh, c["in"])
    if cfg.prenorm:
        gh, g["ln1.g"], g["ln1.b"] = layernorm_backward(gh, c["ln1"])
    gx = gx + gh
    return gx, g
