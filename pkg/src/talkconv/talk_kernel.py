"""Time-aware large-kernel (TaLK) convolution: forward and analytic backward.

For every position ``i`` (1-based) and head ``h`` the output is the sum of the
head's channels over an adaptive window ``[a_l, a_r]`` read from a summed-area
table::

    a_l = clamp(i - rel_l * l_max, 1, i)      a_r = clamp(i + rel_r * r_max, i, n)
    o_i = S(a_r) - S(a_l - 1)

where ``S(c)`` at a real coordinate ``c`` linearly interpolates the table on
the cell ``[floor(c), floor(c) + 1]`` (upper index clamped to ``n``). Cost is
O(B * n * d) regardless of the reach ``l_max``/``r_max``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .scan import sat_build_parallel, sat_suffix_sum
from .tensor_core import ShapeError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaLKConfig:
    d: int
    heads: int = 1
    l_max: int = 3
    r_max: int = 3
    p_drop: float = 0.0
    normalize: bool = True

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.l_max < 0 or self.r_max < 0:
            raise ConfigError("l_max and r_max must be >= 0")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop must be in [0, 1), got {self.p_drop}")
        if self.normalize and self.l_max + self.r_max < 1:
            raise ConfigError("normalized layer with zero reach is a pure identity")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def norm_scale(self) -> float:
        return 1.0 / (self.l_max + self.r_max + 1) if self.normalize else 1.0


@dataclass(frozen=True)
class TaLKSaved:
    """State kept by the forward pass for the backward pass.

    ``*_lo``/``*_hi`` are table rows of the interpolation cell, ``w_*`` the
    weight on the ``hi`` row (fractional part, in ``[0, 1)``). The left read
    therefore weights the lower row by ``gamma_l = 1 - w_left``.
    """
    cfg: TaLKConfig
    table: np.ndarray          # [B, n+1, d]
    a_l: np.ndarray            # [B, n, H] absolute offsets after clamping
    a_r: np.ndarray
    left_lo: np.ndarray        # [B, n, H] int rows for S(a_l - 1)
    left_hi: np.ndarray
    w_left: np.ndarray
    right_lo: np.ndarray       # rows for S(a_r)
    right_hi: np.ndarray
    w_right: np.ndarray
    clamp_l: np.ndarray        # [B, n, H] bool, offset gradient is zero here
    clamp_r: np.ndarray
    bad: np.ndarray            # [B, n, H] non-finite offsets


def offsets_to_absolute(rel: np.ndarray, cfg: TaLKConfig, n: int):
    """Relative offsets ``[B, n, H, 2]`` -> ``(a_l, a_r, clamp_l, clamp_r)``."""
    pos = np.arange(1, n + 1, dtype=rel.dtype)[None, :, None]
    raw_l = pos - rel[..., 0] * cfg.l_max
    raw_r = pos + rel[..., 1] * cfg.r_max
    clamp_l = (raw_l < 1) | (raw_l > pos)
    clamp_r = (raw_r > n) | (raw_r < pos)
    a_l = np.minimum(np.maximum(raw_l, 1), pos)
    a_r = np.minimum(np.maximum(raw_r, pos), n)
    return a_l, a_r, clamp_l, clamp_r


def _cell(coord: np.ndarray, n: int):
    lo = np.floor(coord)
    w = coord - lo
    lo = lo.astype(np.intp)
    hi = np.minimum(lo + 1, n)
    return lo, hi, w


def _check(x: np.ndarray, rel: np.ndarray, cfg: TaLKConfig) -> None:
    if x.ndim != 3 or x.shape[2] != cfg.d:
        raise ShapeError(f"x must be [B, n, {cfg.d}], got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError("sequence length must be >= 1")
    want = (x.shape[0], x.shape[1], cfg.heads, 2)
    if rel.shape != want:
        raise ShapeError(f"offsets must be {want}, got {rel.shape}")


def talk_forward(x: np.ndarray, rel: np.ndarray, cfg: TaLKConfig, workers: int = 1,
                 backend: str | None = None) -> tuple[np.ndarray, TaLKSaved]:
    _check(x, rel, cfg)
    B, n, d = x.shape
    H, R = cfg.heads, cfg.head_dim

    bad = ~np.isfinite(rel).all(axis=-1)
    if bad.any():
        rel = np.where(bad[..., None], 0.0, rel).astype(x.dtype)
    rel = rel.astype(x.dtype, copy=False)

    a_l, a_r, clamp_l, clamp_r = offsets_to_absolute(rel, cfg, n)
    left_lo, left_hi, w_left = _cell(a_l - 1, n)
    right_lo, right_hi, w_right = _cell(a_r, n)

    S = sat_build_parallel(x, workers)
    o = _BACKENDS[backend or BACKEND][0](S, left_lo, left_hi, w_left, right_lo, right_hi,
                                          w_right, H, cfg.norm_scale)
    if bad.any():
        o.reshape(B, n, H, R)[bad] = np.nan

    saved = TaLKSaved(cfg, S, a_l, a_r, left_lo, left_hi, w_left,
                      right_lo, right_hi, w_right, clamp_l, clamp_r, bad)
    return o, saved


def talk_forward_causal(x: np.ndarray, rel: np.ndarray, cfg: TaLKConfig, workers: int = 1,
                        backend: str | None = None) -> tuple[np.ndarray, TaLKSaved]:
    """Decoder mode: the right reach is forced to zero so ``o_i`` sees ``x_1..x_i``."""
    return talk_forward(x, rel, replace(cfg, r_max=0), workers, backend)


def talk_backward(grad_o: np.ndarray, saved: TaLKSaved,
                  backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(grad_x [B, n, d], grad_rel [B, n, H, 2])``.

    Offsets: ``d o / d rel_l = l_max * (S[hi] - S[lo])`` on the left cell
    (widening to the left adds the boundary token) and likewise
    ``r_max * (S[hi] - S[lo])`` on the right cell; zero where clamped.
    Input: interpolation weights are scattered into a table-shaped buffer,
    whose suffix sum is the gradient w.r.t. ``x``.
    """
    cfg, S = saved.cfg, saved.table
    B, n1, d = S.shape
    n = n1 - 1
    if grad_o.shape != (B, n, d):
        raise ShapeError(f"grad_o must be {(B, n, d)}, got {grad_o.shape}")
    G, grad_rel = _BACKENDS[backend or BACKEND][1](
        np.ascontiguousarray(grad_o, dtype=S.dtype), S, saved.left_lo, saved.left_hi,
        saved.w_left, saved.right_lo, saved.right_hi, saved.w_right, cfg.heads, cfg.norm_scale)
    grad_rel[..., 0] *= cfg.l_max
    grad_rel[..., 1] *= cfg.r_max
    grad_rel[..., 0][saved.clamp_l] = 0.0
    grad_rel[..., 1][saved.clamp_r] = 0.0
    if saved.bad.any():
        grad_rel[saved.bad] = np.nan
    return np.ascontiguousarray(sat_suffix_sum(G)), grad_rel


# --- numpy backend ---------------------------------------------------------

def _rows(idx: np.ndarray, n: int, heads: int) -> np.ndarray:
    """Flat row ids into a table viewed as ``[B * (n+1) * H, R]``."""
    b = np.arange(idx.shape[0])[:, None, None]
    h = np.arange(heads)[None, None, :]
    return (b * (n + 1) + idx) * heads + h


def _read_numpy(S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale):
    B, n1, d = S.shape
    n = n1 - 1
    flat = S.reshape(-1, d // heads)
    w_l = w_left[..., None]
    w_r = w_right[..., None]
    upper = (1 - w_r) * flat[_rows(right_lo, n, heads)] + w_r * flat[_rows(right_hi, n, heads)]
    lower = (1 - w_l) * flat[_rows(left_lo, n, heads)] + w_l * flat[_rows(left_hi, n, heads)]
    o = (upper - lower).reshape(B, n, d)
    if scale != 1.0:
        o = o * scale
    return o


def _scatter_numpy(g, S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale):
    B, n1, d = S.shape
    n, R = n1 - 1, d // heads
    g = g.reshape(B, n, heads, R)
    if scale != 1.0:
        g = g * scale
    flat = S.reshape(-1, R)
    rl, rh = _rows(right_lo, n, heads), _rows(right_hi, n, heads)
    ll, lh = _rows(left_lo, n, heads), _rows(left_hi, n, heads)
    grad_rel = np.empty((B, n, heads, 2), dtype=S.dtype)
    grad_rel[..., 0] = (g * (flat[lh] - flat[ll])).sum(axis=-1)
    grad_rel[..., 1] = (g * (flat[rh] - flat[rl])).sum(axis=-1)

    w_l = w_left[..., None]
    w_r = w_right[..., None]
    idx = np.concatenate([r.ravel() for r in (rl, rh, ll, lh)])
    vals = np.concatenate([v.reshape(-1, R) for v in
                           (g * (1 - w_r), g * w_r, -g * (1 - w_l), -g * w_l)])
    # one nonzero per column: scipy applies it as a single unsorted pass
    m = idx.size
    M = sp.csc_matrix((np.ones(m, vals.dtype), idx, np.arange(m + 1)), shape=(B * n1 * heads, m))
    return (M @ vals).reshape(B, n1, d), grad_rel


_BACKENDS = {"numpy": (_read_numpy, _scatter_numpy)}
BACKEND = "numpy"

try:
    from ._fused import read_fused, scatter_fused
except ImportError:  # numba missing: vectorised numpy path only
    pass
else:
    _BACKENDS["numba"] = (read_fused, scatter_fused)
    BACKEND = "numba"
