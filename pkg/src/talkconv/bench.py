"""Throughput / peak-memory benchmark of the sequence-mixing cores.

Each core is timed on a single forward encoding of a ``[B, n, d]`` input, as
in the classic throughput tables: TaLK (offset generation + summation
kernel), full self-attention (``softmax(QK^T/sqrt(d_k))V`` with Q=K=V=x),
and dynamic convolution (kernel generation + softmax + depthwise conv).

Peak memory is read from :mod:`tracemalloc`, which numpy reports its buffer
allocations to, so it counts bytes the core itself allocates.
"""

from __future__ import annotations

import csv
import gc
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselines import BenchCore, OutOfMemory, attention_core, dynamic_conv_core
from .layers import offsets_generate
from .talk_kernel import TaLKConfig, talk_forward

CSV_HEADER = ["core", "n", "iters_per_sec", "peak_bytes", "status"]


@dataclass
class BenchSpec:
    cores: list[BenchCore] = field(default_factory=lambda: [BenchCore("talk")])
    ns: list[int] = field(default_factory=lambda: [10, 100, 1000, 10000])
    batch: int = 10
    dim: int = 1024
    heads: int = 16
    iterations: int = 20
    warmup: int = 2
    repeats: int = 3
    workers: int = 1
    dtype: str = "f32"
    l_max: int = 15
    r_max: int = 15
    seed: int = 0
    max_bytes: int | None = None

    def __post_init__(self):
        if self.iterations < 1 or self.repeats < 1 or self.warmup < 0:
            raise ValueError("iterations and repeats must be >= 1, warmup >= 0")
        if any(n < 1 for n in self.ns):
            raise ValueError("sequence lengths must be >= 1")
        if self.dim % self.heads:
            raise ValueError("heads must divide dim")


@dataclass
class BenchRow:
    core: str
    n: int
    iters_per_sec: float
    peak_bytes: int
    status: str = "ok"
    mem_reduction: float = float("nan")   # attention peak / this core's peak


def make_runner(core: BenchCore, spec: BenchSpec, n: int) -> Callable[[], np.ndarray]:
    """Allocate inputs and parameters (untimed) and return the timed closure."""
    dtype = np.float32 if spec.dtype == "f32" else np.float64
    rng = np.random.default_rng([spec.seed, n])
    B, d, H = spec.batch, spec.dim, spec.heads
    x = rng.standard_normal((B, n, d)).astype(dtype)

    if core.kind == "talk":
        cfg = TaLKConfig(d=d, heads=H, l_max=spec.l_max, r_max=spec.r_max)
        w = (rng.standard_normal((H, d // H, 2)) * 0.1).astype(dtype)
        b = np.zeros((H, 2), dtype)

        def run():
            rel, _ = offsets_generate(x, w, b, H)
            return talk_forward(x, rel, cfg, spec.workers)[0]
    elif core.kind == "attention":
        def run():
            return attention_core(x, H, max_bytes=spec.max_bytes)
    else:
        wgen = (rng.standard_normal((d, H * core.k)) * 0.1).astype(dtype)

        def run():
            return dynamic_conv_core(x, wgen, core.k, H)
    return run


def measure_peak(run: Callable[[], np.ndarray]) -> int:
    gc.collect()
    tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        out = run()
        peak = tracemalloc.get_traced_memory()[1] - base
        del out
    finally:
        tracemalloc.stop()
    return int(peak)


def time_runner(run: Callable[[], np.ndarray], iterations: int, warmup: int, repeats: int) -> float:
    """Best-of-``repeats`` throughput in iterations per second."""
    for _ in range(warmup):
        run()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(iterations):
            run()
        best = min(best, time.perf_counter() - t0)
    return iterations / best


def bench_one(core: BenchCore, spec: BenchSpec, n: int) -> BenchRow:
    try:
        run = make_runner(core, spec, n)
        run()  # JIT compilation and first-touch allocations stay out of the peak
        peak = measure_peak(run)
        ips = time_runner(run, spec.iterations, spec.warmup, spec.repeats)
    except MemoryError:  # includes OutOfMemory from the attention budget check
        return BenchRow(str(core), n, 0.0, 0, "OOM")
    return BenchRow(str(core), n, ips, peak)


def run_bench(spec: BenchSpec, on_row: Callable[[BenchRow], None] | None = None) -> list[BenchRow]:
    rows = []
    for n in spec.ns:
        batch = []
        for core in spec.cores:
            row = bench_one(core, spec, n)
            batch.append(row)
        att = next((r for r in batch if r.core == "attention"), None)
        for row in batch:
            if att is not None and row.status == "ok" and row.peak_bytes:
                # attention OOM counts as "at least" the budget it exceeded
                ref = att.peak_bytes if att.status == "ok" else float("nan")
                row.mem_reduction = ref / row.peak_bytes
            if on_row:
                on_row(row)
        rows.extend(batch)
    return rows


def write_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.core, r.n, f"{r.iters_per_sec:.6g}", r.peak_bytes, r.status])


__all__ = ["BenchSpec", "BenchRow", "CSV_HEADER", "OutOfMemory", "run_bench", "write_csv",
           "bench_one", "make_runner", "measure_peak", "time_runner"]
