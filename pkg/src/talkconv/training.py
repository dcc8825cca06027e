"""Desk-scale training: synthetic tasks, Adam, warmup + cosine schedule."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import softmax_xent_backward, softmax_xent_forward
from .model import ModelConfig, init_model, model_backward, model_forward
from .talk_kernel import ConfigError
from .tensor_core import tensor_load, tensor_save

log = logging.getLogger(__name__)

TASKS = ("copy", "reverse", "char_lm")
BLANK = 0


@dataclass
class TrainConfig:
    task: str = "copy"
    vocab: int = 16
    seq_len: int = 32
    text_path: str = ""
    # model
    d: int = 64
    d_ff: int = 128
    heads: int = 4
    l_max: list[int] = field(default_factory=lambda: [16, 16])
    r_max: list[int] = field(default_factory=lambda: [0, 0])
    p_drop: float = 0.0
    normalize: bool = True
    glu: bool = True
    prenorm: bool = True
    pos_emb: bool = False
    # optimisation
    lr_peak: float = 1e-3
    lr_floor: float = 1e-7
    warmup_steps: int = 200
    total_steps: int = 5000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    dtype: str = "f32"
    # io
    log_every: int = 50
    checkpoint_path: str = ""
    checkpoint_every: int = 0
    report_path: str = ""
    eval_batches: int = 4
    target_accuracy: float = 0.0   # > 0: stop at the first logged step whose eval reaches it

    def __post_init__(self):
        self.l_max = list(self.l_max)
        self.r_max = list(self.r_max)
        self.betas = tuple(self.betas)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError("need 0 <= warmup_steps < total_steps")
        if self.lr_peak <= 0:
            raise ConfigError("lr_peak must be > 0")
        if len(self.l_max) != len(self.r_max):
            raise ConfigError("l_max and r_max need one entry per layer")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be f32 or f64")
        if self.task == "char_lm":
            self.vocab = 256
        elif self.vocab < 4:
            raise ConfigError("vocab must be >= 4")
        if self.task == "copy" and self.seq_len % 2:
            raise ConfigError("copy task needs an even seq_len")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "TrainConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @property
    def causal(self) -> bool:
        return self.task != "reverse"

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab=self.vocab, d=self.d, d_ff=self.d_ff, heads=self.heads,
            l_max=tuple(self.l_max), r_max=tuple(self.r_max), p_drop=self.p_drop,
            normalize=self.normalize, causal=self.causal, glu=self.glu,
            prenorm=self.prenorm, max_len=self.seq_len if self.pos_emb else 0,
        )


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from ``lr_floor`` to ``lr_peak``, then cosine back to the floor."""
    lo, hi = cfg.lr_floor, cfg.lr_peak
    if step < cfg.warmup_steps:
        return lo + (hi - lo) * step / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return lo + (hi - lo) * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class Adam:
    """Adam with bias correction. Non-finite gradients skip the step and bump
    ``skipped`` so divergence shows up in the report instead of crashing."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.skipped = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr: float) -> bool:
        if not all(np.isfinite(g).all() for g in grads.values()):
            self.skipped += 1
            return False
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
        return True

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t, self.skipped], dtype=np.float64)
        return out

    def load_state(self, tensors) -> None:
        for k in self.m:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()
        self.t, self.skipped = (int(v) for v in tensors["adam.t"])


# --- tasks -----------------------------------------------------------------

@dataclass
class TaskBatch:
    inputs: np.ndarray    # [B, n] int
    targets: np.ndarray   # [B, n] int
    mask: np.ndarray      # [B, n] float in {0, 1}


def make_copy_batch(rng, B: int, n: int, vocab: int) -> TaskBatch:
    """First half: random symbols from ``1..vocab-1``; second half: blanks.
    The second half must reproduce the first, i.e. look back ``n/2`` steps."""
    if vocab < 4:
        raise ConfigError("vocab must be >= 4")
    if n % 2:
        raise ConfigError("copy task needs even n")
    h = n // 2
    pattern = rng.integers(1, vocab, size=(B, h))
    inputs = np.concatenate([pattern, np.full((B, h), BLANK)], axis=1)
    targets = np.concatenate([np.full((B, h), BLANK), pattern], axis=1)
    mask = np.concatenate([np.zeros((B, h)), np.ones((B, h))], axis=1)
    return TaskBatch(inputs, targets, mask)


def make_reverse_batch(rng, B: int, n: int, vocab: int) -> TaskBatch:
    """Output position ``i`` must emit input ``n-1-i``: needs reach in both directions."""
    if vocab < 4:
        raise ConfigError("vocab must be >= 4")
    inputs = rng.integers(1, vocab, size=(B, n))
    return TaskBatch(inputs, inputs[:, ::-1].copy(), np.ones((B, n)))


def make_char_lm_batch(rng, data: np.ndarray, B: int, n: int) -> TaskBatch:
    if len(data) < n + 2:
        raise ConfigError(f"text has {len(data)} bytes, need more than seq_len + 1")
    starts = rng.integers(0, len(data) - n - 1, size=B)
    win = np.stack([data[s:s + n + 1] for s in starts]).astype(np.int64)
    return TaskBatch(win[:, :-1], win[:, 1:], np.ones((B, n)))


class TaskSource:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.data = None
        if cfg.task == "char_lm":
            if not cfg.text_path:
                raise ConfigError("char_lm needs text_path")
            self.data = np.frombuffer(Path(cfg.text_path).read_bytes(), dtype=np.uint8)

    def batch(self, rng, B: int | None = None) -> TaskBatch:
        c = self.cfg
        B = B or c.batch_size
        if c.task == "copy":
            return make_copy_batch(rng, B, c.seq_len, c.vocab)
        if c.task == "reverse":
            return make_reverse_batch(rng, B, c.seq_len, c.vocab)
        return make_char_lm_batch(rng, self.data, B, c.seq_len)


# --- loop ------------------------------------------------------------------

@dataclass
class TrainReport:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    final_loss: float = float("nan")
    final_accuracy: float = float("nan")
    initial_loss: float = float("nan")
    diverged: bool = False
    skipped_steps: int = 0
    steps_run: int = 0
    reached_at: int | None = None    # step at which target_accuracy was first met
    params: dict = field(default_factory=dict, repr=False)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "lr", "accuracy"])
            for step, loss, lr, acc in self.rows:
                w.writerow([step, repr(loss), repr(lr), repr(acc)])


def masked_accuracy(logits, batch: TaskBatch) -> float:
    hit = (logits.argmax(axis=-1) == batch.targets) * batch.mask
    return float(hit.sum() / max(batch.mask.sum(), 1.0))


def evaluate(params, mcfg: ModelConfig, source: TaskSource, cfg: TrainConfig) -> tuple[float, float]:
    rng = np.random.default_rng([cfg.seed, 2**31 - 1])
    losses, accs = [], []
    for _ in range(cfg.eval_batches):
        b = source.batch(rng)
        logits, _ = model_forward(params, mcfg, b.inputs)
        losses.append(softmax_xent_forward(logits, b.targets, b.mask)[0])
        accs.append(masked_accuracy(logits, b))
    return float(np.mean(losses)), float(np.mean(accs))


def save_checkpoint(path, params, opt: Adam, step: int) -> None:
    tensors = {f"param.{k}": v for k, v in params.items()}
    tensors.update(opt.state_tensors())
    tensors["meta.step"] = np.array([step], dtype=np.float64)
    tensor_save(tensors, path)


def load_checkpoint(path, params, opt: Adam) -> int:
    t = tensor_load(path)
    for k in params:
        params[k] = t[f"param.{k}"].copy()
    opt.load_state(t)
    return int(t["meta.step"][0])


def train_loop(cfg: TrainConfig, stop_at: int | None = None,
               resume_from: str | os.PathLike | None = None) -> TrainReport:
    """Train for ``cfg.total_steps`` (or until ``stop_at``).

    Batch and dropout randomness are drawn from streams keyed by
    ``(seed, step)``, so a run resumed from a checkpoint replays exactly the
    steps the uninterrupted run would have taken.
    """
    mcfg = cfg.model_config()
    params = init_model(mcfg, np.random.default_rng(cfg.seed), cfg.np_dtype)
    opt = Adam(params, cfg.betas, cfg.eps)
    source = TaskSource(cfg)
    start = 0
    if resume_from is not None:
        start = load_checkpoint(resume_from, params, opt)
        log.info("resumed from %s at step %d", resume_from, start)

    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    report = TrainReport(skipped_steps=opt.skipped)
    init_loss = math.log(cfg.vocab)
    report.initial_loss = init_loss
    above = 0

    for step in range(start, end):
        batch = source.batch(np.random.default_rng([cfg.seed, step, 0]))
        drop_rng = np.random.default_rng([cfg.seed, step, 1])
        logits, saved = model_forward(params, mcfg, batch.inputs, training=True, rng=drop_rng)
        loss, xcache = softmax_xent_forward(logits, batch.targets, batch.mask)
        lr = lr_schedule(step, cfg)
        grads = model_backward(softmax_xent_backward(xcache).astype(logits.dtype, copy=False),
                               saved, mcfg)
        opt.step(params, grads, lr)

        above = above + 1 if not loss <= 10 * init_loss else 0
        if not math.isfinite(loss) or above >= 100:
            report.diverged = True
        if (step + 1) % cfg.log_every == 0 or step + 1 == end:
            acc = masked_accuracy(logits, batch)
            report.rows.append((step + 1, loss, lr, acc))
            log.info("step %d loss %.4f lr %.2e acc %.3f", step + 1, loss, lr, acc)
            if cfg.target_accuracy > 0 and evaluate(params, mcfg, source, cfg)[1] >= cfg.target_accuracy:
                report.reached_at = step + 1
                report.steps_run = step + 1 - start
                break
        if cfg.checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(cfg.checkpoint_path, params, opt, step + 1)
        if report.diverged and not math.isfinite(loss):
            log.warning("loss is non-finite at step %d, stopping", step + 1)
            report.steps_run = step + 1 - start
            break
    else:
        report.steps_run = end - start

    report.skipped_steps = opt.skipped
    if opt.skipped:
        report.diverged = True
    report.final_loss, report.final_accuracy = evaluate(params, mcfg, source, cfg)
    if not math.isfinite(report.final_loss):
        report.diverged = True
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, params, opt, start + report.steps_run)
    if cfg.report_path:
        report.write_csv(cfg.report_path)
    report.params = params
    return report
