"""Fused per-element TaLK reads/scatters compiled with numba.

Same arithmetic, in the same order, as the numpy path in ``talk_kernel``; the
gain is one pass over ``[B, n, d]`` instead of a dozen temporaries.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _read(S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale, out):
    B, n1, d = S.shape
    n = n1 - 1
    R = d // heads
    one = S.dtype.type(1)
    for b in range(B):
        for i in range(n):
            for h in range(heads):
                ll, lh, wl = left_lo[b, i, h], left_hi[b, i, h], w_left[b, i, h]
                rl, rh, wr = right_lo[b, i, h], right_hi[b, i, h], w_right[b, i, h]
                for c in range(h * R, (h + 1) * R):
                    upper = (one - wr) * S[b, rl, c] + wr * S[b, rh, c]
                    lower = (one - wl) * S[b, ll, c] + wl * S[b, lh, c]
                    out[b, i, c] = (upper - lower) * scale


@numba.njit(cache=True)
def _scatter(g, S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale,
             G, grad_rel):
    B, n1, d = S.shape
    n = n1 - 1
    R = d // heads
    one = S.dtype.type(1)
    for b in range(B):
        for i in range(n):
            for h in range(heads):
                ll, lh, wl = left_lo[b, i, h], left_hi[b, i, h], w_left[b, i, h]
                rl, rh, wr = right_lo[b, i, h], right_hi[b, i, h], w_right[b, i, h]
                acc_l = S.dtype.type(0)
                acc_r = S.dtype.type(0)
                for c in range(h * R, (h + 1) * R):
                    gv = g[b, i, c] * scale
                    acc_l += gv * (S[b, lh, c] - S[b, ll, c])
                    acc_r += gv * (S[b, rh, c] - S[b, rl, c])
                    G[b, rl, c] += gv * (one - wr)
                    G[b, rh, c] += gv * wr
                    G[b, ll, c] -= gv * (one - wl)
                    G[b, lh, c] -= gv * wl
                grad_rel[b, i, h, 0] = acc_l
                grad_rel[b, i, h, 1] = acc_r


def read_fused(S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale):
    B, n1, d = S.shape
    out = np.empty((B, n1 - 1, d), dtype=S.dtype)
    _read(S, left_lo, left_hi, w_left.astype(S.dtype, copy=False), right_lo, right_hi,
          w_right.astype(S.dtype, copy=False), heads, S.dtype.type(scale), out)
    return out


def scatter_fused(g, S, left_lo, left_hi, w_left, right_lo, right_hi, w_right, heads, scale):
    B, n1, d = S.shape
    G = np.zeros_like(S)
    grad_rel = np.empty((B, n1 - 1, heads, 2), dtype=S.dtype)
    _scatter(g, S, left_lo, left_hi, w_left.astype(S.dtype, copy=False), right_lo, right_hi,
             w_right.astype(S.dtype, copy=False), heads, S.dtype.type(scale), G, grad_rel)
    return G, grad_rel


@numba.njit(cache=True)
def prefix_table(x, S):
    B, n, d = x.shape
    for b in range(B):
        for c in range(d):
            S[b, 0, c] = 0
        for i in range(n):
            for c in range(d):
                S[b, i + 1, c] = S[b, i, c] + x[b, i, c]


@numba.njit(cache=True)
def suffix_rows(g, out):
    """``out[:, j] = g[:, j+1] + ... + g[:, n]``, accumulated from the end."""
    B, n1, d = g.shape
    n = n1 - 1
    for b in range(B):
        for c in range(d):
            out[b, n - 1, c] = g[b, n, c]
        for j in range(n - 2, -1, -1):
            for c in range(d):
                out[b, j, c] = out[b, j + 1, c] + g[b, j + 1, c]
