"""A stack of TaLK blocks over token embeddings, with a softmax head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (BlockConfig, embedding_backward, embedding_forward,
                     init_block, layernorm_backward, layernorm_forward,
                     linear_backward, linear_forward, talk_block_backward,
                     talk_block_forward)
from .talk_kernel import ConfigError, TaLKConfig


@dataclass(frozen=True)
class ModelConfig:
    vocab: int
    d: int = 64
    d_ff: int = 128
    heads: int = 4
    l_max: tuple[int, ...] = (3, 7)
    r_max: tuple[int, ...] = (0, 0)
    p_drop: float = 0.0
    normalize: bool = True
    causal: bool = True
    glu: bool = True
    prenorm: bool = True
    dropout: float = 0.0
    max_len: int = 0          # learned positional embedding when > 0

    def __post_init__(self):
        object.__setattr__(self, "l_max", tuple(self.l_max))
        object.__setattr__(self, "r_max", tuple(self.r_max))
        if len(self.l_max) != len(self.r_max):
            raise ConfigError("l_max and r_max lists must have one entry per layer")
        if not self.l_max:
            raise ConfigError("need at least one layer")

    @property
    def layers(self) -> int:
        return len(self.l_max)

    def block(self, i: int) -> BlockConfig:
        talk = TaLKConfig(d=self.d, heads=self.heads, l_max=self.l_max[i],
                          r_max=0 if self.causal else self.r_max[i],
                          p_drop=self.p_drop, normalize=self.normalize)
        return BlockConfig(talk=talk, d_ff=self.d_ff, glu=self.glu,
                           causal=self.causal, prenorm=self.prenorm,
                           dropout=self.dropout)


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
    params = {"emb": rng.normal(0.0, 1.0, (cfg.vocab, cfg.d)).astype(dtype)}
    if cfg.max_len:
        params["pos"] = rng.normal(0.0, 0.1, (cfg.max_len, cfg.d)).astype(dtype)
    for i in range(cfg.layers):
        for k, v in init_block(cfg.block(i), rng, dtype).items():
            params[f"blocks.{i}.{k}"] = v
    if cfg.prenorm:
        params["lnf.g"] = np.ones(cfg.d, dtype)
        params["lnf.b"] = np.zeros(cfg.d, dtype)
    lim = np.sqrt(1.0 / cfg.d)
    params["head.w"] = rng.uniform(-lim, lim, (cfg.d, cfg.vocab)).astype(dtype)
    params["head.b"] = np.zeros(cfg.vocab, dtype)
    return params


@dataclass
class ModelSaved:
    emb: tuple
    blocks: list = field(default_factory=list)
    lnf: tuple | None = None
    head: tuple | None = None
    n: int = 0


def _block_params(params, i):
    prefix = f"blocks.{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def model_forward(params, cfg: ModelConfig, ids: np.ndarray, training=False, rng=None,
                  trace: list | None = None):
    """Token ids ``[B, n]`` -> logits ``[B, n, vocab]``.

    ``trace``, if given, receives the residual stream after each block.
    """
    B, n = ids.shape
    h, emb_cache = embedding_forward(ids, params["emb"])
    if cfg.max_len:
        if n > cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
        h = h + params["pos"][:n]
    saved = ModelSaved(emb=emb_cache, n=n)
    for i in range(cfg.layers):
        h, s = talk_block_forward(h, _block_params(params, i), cfg.block(i), training, rng)
        saved.blocks.append(s)
        if trace is not None:
            trace.append(h)
    if cfg.prenorm:
        h, saved.lnf = layernorm_forward(h, params["lnf.g"], params["lnf.b"])
    logits, saved.head = linear_forward(h, params["head.w"], params["head.b"])
    return logits, saved


def model_backward(glogits, saved: ModelSaved, cfg: ModelConfig) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    g, grads["head.w"], grads["head.b"] = linear_backward(glogits, saved.head)
    if cfg.prenorm:
        g, grads["lnf.g"], grads["lnf.b"] = layernorm_backward(g, saved.lnf)
    for i in reversed(range(cfg.layers)):
        g, bg = talk_block_backward(g, saved.blocks[i])
        for k, v in bg.items():
            grads[f"blocks.{i}.{k}"] = v
    if cfg.max_len:
        gpos = np.zeros((cfg.max_len, g.shape[-1]), dtype=g.dtype)
        gpos[:saved.n] = g.sum(axis=0)
        grads["pos"] = gpos
    grads["emb"] = embedding_backward(g, saved.emb)
    return grads
