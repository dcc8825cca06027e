"""Reference cores: a brute-force TaLK oracle and the benchmark competitors
(full softmax self-attention and dynamic convolution). All forward-only."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .talk_kernel import TaLKConfig, talk_forward


class OutOfMemory(MemoryError):
    pass


@dataclass(frozen=True)
class BenchCore:
    kind: str          # "talk" | "attention" | "dynconv"
    k: int = 0         # kernel width for dynconv

    def __post_init__(self):
        if self.kind not in ("talk", "attention", "dynconv"):
            raise ValueError(f"unknown core {self.kind!r}")
        if self.kind == "dynconv" and (self.k < 1 or self.k % 2 == 0):
            raise ValueError(f"dynconv kernel width must be odd and >= 1, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "BenchCore":
        """``talk``, ``attention``, ``dynconv`` (k=31) or ``dynconv:K``."""
        name, _, k = text.partition(":")
        if name == "dynconv":
            return cls("dynconv", int(k) if k else 31)
        return cls(name)

    def __str__(self) -> str:
        return f"dynconv:{self.k}" if self.kind == "dynconv" else self.kind


def talk_oracle(x: np.ndarray, rel: np.ndarray, cfg: TaLKConfig) -> np.ndarray:
    """Brute-force TaLK output from window coverage.

    Token ``t`` occupies the interval ``(t-1, t]``; the interpolated window
    ``(a_l - 1, a_r]`` covers a fraction of it, and the output is the
    coverage-weighted sum of tokens. No prefix sums are involved.
    """
    B, n, d = x.shape
    if n > 512:
        raise ValueError("oracle is for small instances (n <= 512)")
    H, R = cfg.heads, cfg.head_dim
    out = np.zeros_like(x)
    t = np.arange(1, n + 1, dtype=np.float64)
    for b in range(B):
        for h in range(H):
            for i in range(1, n + 1):
                left = i - float(rel[b, i - 1, h, 0]) * cfg.l_max
                right = i + float(rel[b, i - 1, h, 1]) * cfg.r_max
                left = min(max(left, 1.0), float(i))
                right = min(max(right, float(i)), float(n))
                cover = np.clip(np.minimum(right, t) - np.maximum(left - 1.0, t - 1.0), 0.0, 1.0)
                out[b, i - 1, h * R:(h + 1) * R] = cover @ x[b, :, h * R:(h + 1) * R]
    if cfg.normalize:
        out = out * cfg.norm_scale
    return out


def _memory_budget() -> int:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE") // 2
    except (ValueError, OSError):
        return 1 << 31


def attention_core(q: np.ndarray, heads: int = 1, k: np.ndarray | None = None,
                   v: np.ndarray | None = None, max_bytes: int | None = None) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` per head; ``k`` and ``v`` default to ``q``.

    Raises :class:`OutOfMemory` when the ``[B, H, n, n]`` score buffers would
    not fit in ``max_bytes`` (half the free physical memory by default).
    """
    k = q if k is None else k
    v = q if v is None else v
    B, n, d = q.shape
    if d % heads:
        raise ValueError(f"heads={heads} must divide d={d}")
    dk = d // heads
    need = 2 * B * heads * n * k.shape[1] * q.dtype.itemsize
    budget = _memory_budget() if max_bytes is None else max_bytes
    if need > budget:
        raise OutOfMemory(f"attention needs {need} bytes for n={n}, budget {budget}")

    def split(t):
        return t.reshape(t.shape[0], t.shape[1], heads, dk).transpose(0, 2, 1, 3)

    try:
        scores = split(q) @ split(k).transpose(0, 1, 3, 2)
        scores *= q.dtype.type(1.0 / math.sqrt(dk))
        probs = softmax(scores, axis=-1)
        del scores
        out = probs @ split(v)
    except MemoryError as e:
        raise OutOfMemory(str(e)) from e
    return out.transpose(0, 2, 1, 3).reshape(B, n, d)


def dynamic_conv_core(x: np.ndarray, weights_gen: np.ndarray, k: int, heads: int) -> np.ndarray:
    """Depthwise convolution with a per-position softmax kernel of width ``k``.

    ``weights_gen`` is ``[d, heads * k]``: each position's kernel logits are a
    linear function of its own input. The window is centred (zero padded).
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {k}")
    B, n, d = x.shape
    R = d // heads
    logits = (x @ weights_gen).reshape(B, n, heads, k)
    w = softmax(logits, axis=-1).astype(x.dtype, copy=False)
    pad = k // 2
    xp = np.zeros((B, n + 2 * pad, heads, R), dtype=x.dtype)
    xp[:, pad:pad + n] = x.reshape(B, n, heads, R)
    out = np.zeros((B, n, heads, R), dtype=x.dtype)
    for j in range(k):
        out += w[..., j, None] * xp[:, j:j + n]
    return out.reshape(B, n, d)


def oracle_case(rng: np.random.Generator, dtype=np.float64):
    """A random small instance ``(x, rel, cfg)`` for kernel-vs-oracle checks.

    Offsets mix three kinds per entry: uniform fractional, values landing on
    integer window bounds, and the extremes 0 and 1 (which clamp near the
    sequence edges when the reach exceeds the distance to the edge).
    """
    H = int(rng.choice([1, 2, 8]))
    d = H * int(rng.integers(1, 32 // H + 1))
    n = int(rng.integers(1, 65))
    B = int(rng.integers(1, 5))
    cfg = TaLKConfig(d=d, heads=H, l_max=int(rng.integers(0, 20)), r_max=int(rng.integers(1, 20)),
                     normalize=bool(rng.integers(0, 2)))
    x = rng.normal(size=(B, n, d)).astype(dtype)
    shape = (B, n, H, 2)
    frac = rng.uniform(0, 1, shape)
    reach = np.array([max(cfg.l_max, 1), cfg.r_max], dtype=np.float64)
    on_grid = rng.integers(0, reach.astype(int) + 1, size=shape) / reach
    extreme = rng.integers(0, 2, size=shape).astype(np.float64)
    kind = rng.integers(0, 3, size=shape)
    rel = np.where(kind == 0, frac, np.where(kind == 1, on_grid, extreme)).astype(dtype)
    return x, rel, cfg


def oracle_diff(seed: int = 0, instances: int = 500, dtype=np.float64) -> float:
    """Worst relative error of the table kernel against :func:`talk_oracle`.

    Per instance the error is ``max|kernel - oracle| / max|oracle|``; the
    oracle is evaluated in f64 on the same (possibly f32-rounded) inputs.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        x, rel, cfg = oracle_case(rng, dtype)
        got = talk_forward(x, rel, cfg)[0].astype(np.float64)
        want = talk_oracle(x.astype(np.float64), rel.astype(np.float64), cfg)
        scale = max(float(np.abs(want).max()), np.finfo(np.float64).tiny)
        worst = max(worst, float(np.abs(got - want).max()) / scale)
    return worst
