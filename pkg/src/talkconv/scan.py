"""One-dimensional summed-area tables over the time axis.

A table for ``x`` of shape ``[B, n, d]`` has shape ``[B, n + 1, d]`` with a
leading zero row, so that any window sum ``x[l..r]`` (1-based, inclusive) is
``S[r] - S[l - 1]`` without a boundary branch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .tensor_core import ShapeError

try:
    from ._fused import prefix_table as _prefix_table, suffix_rows as _suffix_rows
except ImportError:
    _prefix_table = _suffix_rows = None


def _check_input(x: np.ndarray) -> None:
    if x.ndim != 3:
        raise ShapeError(f"expected [B, n, d], got shape {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError("sequence length must be >= 1")


def sat_build_sequential(x: np.ndarray) -> np.ndarray:
    """``S[0] = 0, S[i] = S[i-1] + x[i-1]`` evaluated strictly left to right."""
    _check_input(x)
    B, n, d = x.shape
    S = np.empty((B, n + 1, d), dtype=x.dtype)
    if _prefix_table is not None:
        _prefix_table(np.ascontiguousarray(x), S)
        return S
    # row-at-a-time recurrence; numpy's accumulate along a middle axis is slower
    S[:, 0] = 0
    for i in range(n):
        np.add(S[:, i], x[:, i], out=S[:, i + 1])
    return S


def blelloch_phases(n: int) -> int:
    """Number of dependent phases the two-pass scan runs for length ``n``."""
    return 2 * math.ceil(math.log2(n)) if n > 1 else 0


def _blelloch_columns(cols: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Work-efficient scan of ``cols`` (shape ``[n, k]``) -> table ``[n+1, k]``."""
    m = 1 << max(0, math.ceil(math.log2(n))) if n > 1 else 1
    buf = np.zeros((m, cols.shape[1]), dtype=cols.dtype)
    buf[:n] = cols
    phases = 0

    step = 2
    while step <= m:  # up-sweep: partial sums of each aligned block
        buf[step - 1::step] += buf[step // 2 - 1::step]
        phases += 1
        step *= 2

    total = buf[m - 1].copy()
    buf[m - 1] = 0

    step = m
    while step >= 2:  # down-sweep: push exclusive prefixes back to the leaves
        left = buf[step // 2 - 1::step].copy()
        buf[step // 2 - 1::step] = buf[step - 1::step]
        buf[step - 1::step] += left
        phases += 1
        step //= 2

    table = np.empty((n + 1, cols.shape[1]), dtype=cols.dtype)
    table[:n] = buf[:n]
    table[n] = total
    return table, phases


def sat_build_parallel(x: np.ndarray, workers: int = 1, *,
                       return_phases: bool = False):
    """Summed-area table via the up-sweep/down-sweep prefix sum.

    Columns (``B * d`` of them) are split across ``workers`` threads; each
    thread runs the same ``2 * ceil(log2 n)`` phases. With ``workers=1`` the
    sequential recurrence is used, so results are bit-identical to
    :func:`sat_build_sequential`.
    """
    _check_input(x)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    B, n, d = x.shape
    if workers == 1:
        S = sat_build_sequential(x)
        return (S, blelloch_phases(n)) if return_phases else S

    cols = np.ascontiguousarray(x.transpose(1, 0, 2).reshape(n, B * d))
    chunks = np.array_split(np.arange(B * d), min(workers, B * d))
    table = np.empty((n + 1, B * d), dtype=x.dtype)
    phase_counts = []

    def run(idx: np.ndarray) -> None:
        part, ph = _blelloch_columns(cols[:, idx[0]:idx[-1] + 1], n)
        table[:, idx[0]:idx[-1] + 1] = part
        phase_counts.append(ph)

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        list(pool.map(run, chunks))

    assert len(set(phase_counts)) == 1
    S = np.ascontiguousarray(table.reshape(n + 1, B, d).transpose(1, 0, 2))
    return (S, phase_counts[0]) if return_phases else S


def sat_suffix_sum(g: np.ndarray) -> np.ndarray:
    """Adjoint of the table build: ``out[j] = sum(g[j+1:])`` along time.

    Since ``S[k]`` contains ``x[j]`` for every ``k >= j + 1``, this maps a
    gradient w.r.t. the table to the gradient w.r.t. the input.
    """
    if g.ndim != 3 or g.shape[1] < 2:
        raise ShapeError(f"expected table-shaped [B, n+1, d], got {g.shape}")
    B, n1, d = g.shape
    out = np.empty((B, n1 - 1, d), dtype=g.dtype)
    if _suffix_rows is not None:
        _suffix_rows(np.ascontiguousarray(g), out)
        return out
    out[:, -1] = g[:, -1]
    for j in range(n1 - 3, -1, -1):
        np.add(out[:, j + 1], g[:, j + 1], out=out[:, j])
    return out
