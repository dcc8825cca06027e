"""Central finite-difference checks for every hand-written backward pass.

TaLK outputs are piecewise linear in the offsets (kinks where an absolute
offset crosses an integer, or where clamping starts). Checks that involve
offsets either sample away from those points or pass a ``signature`` that
identifies the active interpolation cells; an entry whose +h and -h
evaluations land in different cells is skipped rather than compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import layers as L
from .talk_kernel import TaLKConfig, talk_backward, talk_forward

STEP = 1e-5
KERNEL_TOL = 1e-6
LAYER_TOL = 1e-6
BLOCK_TOL = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 if both vanish)."""
    ok = np.isfinite(numeric)
    a, n = analytic[ok], numeric[ok]
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - n) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP,
                 signature: Callable[[], object] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place).

    Entries where ``signature()`` differs between the two sides are NaN.
    """
    grad = np.empty_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        sp = signature() if signature else None
        x[idx] = orig - h
        fm = f()
        sm = signature() if signature else None
        x[idx] = orig
        grad[idx] = np.nan if sp != sm else (fp - fm) / (2 * h)
    return grad


def sample_offsets(rng, shape, cfg: TaLKConfig, margin: float = 1e-3) -> np.ndarray:
    """Offsets in ``[0, 1]`` whose absolute positions sit at least ``margin``
    away from integers and from the clamp boundaries."""
    B, n, H, _ = shape
    rel = rng.uniform(0, 1, shape)
    pos = np.arange(1, n + 1)[None, :, None]
    for side, reach, sign in ((0, cfg.l_max, -1), (1, cfg.r_max, 1)):
        if reach == 0:
            continue
        while True:
            coord = pos + sign * rel[..., side] * reach
            frac = coord - np.round(coord)
            edge = np.abs(coord - 1) if side == 0 else np.abs(coord - n)
            bad = (np.abs(frac) < margin) | (edge < margin)
            if not bad.any():
                break
            rel[..., side] = np.where(bad, rng.uniform(0, 1, bad.shape), rel[..., side])
    return rel


# --- individual checks -----------------------------------------------------

def check_talk_kernel(rng, backward=talk_backward) -> dict[str, float]:
    H = int(rng.choice([1, 3]))
    d = H * int(rng.integers(1, 4)) if H == 1 else 3
    n = int(rng.integers(1, 7))
    B = int(rng.integers(1, 3))
    cfg = TaLKConfig(d=d, heads=H, l_max=int(rng.integers(0, 5)), r_max=int(rng.integers(1, 5)),
                     normalize=bool(rng.integers(0, 2)))
    x = rng.normal(size=(B, n, d))
    rel = sample_offsets(rng, (B, n, H, 2), cfg)
    proj = rng.normal(size=(B, n, d))

    def loss():
        return float((talk_forward(x, rel, cfg)[0] * proj).sum())

    _, saved = talk_forward(x, rel, cfg)
    gx, grel = backward(proj, saved)
    out = {"talk.x": rel_error(gx, numeric_grad(loss, x)),
           "talk.offsets": rel_error(grel, numeric_grad(loss, rel))}
    clamped = np.stack([saved.clamp_l, saved.clamp_r], axis=-1)
    # clamped offsets must carry exactly zero gradient
    out["talk.clamped_nonzero"] = float(np.abs(grel[clamped]).sum()) if clamped.any() else 0.0
    return out


def check_layers(rng) -> dict[str, float]:
    B, n, d = int(rng.integers(1, 3)), int(rng.integers(1, 5)), 2 * int(rng.integers(2, 4))
    out = {}

    x = rng.normal(size=(B, n, d))
    w, b = rng.normal(size=(d, 3)), rng.normal(size=3)
    proj = rng.normal(size=(B, n, 3))
    f = lambda: float((L.linear_forward(x, w, b)[0] * proj).sum())
    gx, gw, gb = L.linear_backward(proj, L.linear_forward(x, w, b)[1])
    out["linear"] = max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, w)),
                        rel_error(gb, numeric_grad(f, b)))

    proj = rng.normal(size=(B, n, d // 2))
    f = lambda: float((L.glu_forward(x)[0] * proj).sum())
    out["glu"] = rel_error(L.glu_backward(proj, L.glu_forward(x)[1]), numeric_grad(f, x))

    proj = rng.normal(size=(B, n, d))
    f = lambda: float((L.swish_forward(x)[0] * proj).sum())
    out["swish"] = rel_error(L.swish_backward(proj, L.swish_forward(x)[1]), numeric_grad(f, x))

    gamma, beta = rng.normal(size=d), rng.normal(size=d)
    f = lambda: float((L.layernorm_forward(x, gamma, beta)[0] * proj).sum())
    gx, gg, gb = L.layernorm_backward(proj, L.layernorm_forward(x, gamma, beta)[1])
    out["layernorm"] = max(rel_error(gx, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, gamma)),
                           rel_error(gb, numeric_grad(f, beta)))

    V = 5
    table = rng.normal(size=(V, d))
    ids = rng.integers(0, V, size=(B, n))
    f = lambda: float((L.embedding_forward(ids, table)[0] * proj).sum())
    out["embedding"] = rel_error(L.embedding_backward(proj, L.embedding_forward(ids, table)[1]),
                                 numeric_grad(f, table))

    logits = rng.normal(size=(B, n, V))
    mask = (rng.random((B, n)) < 0.7).astype(float)
    mask.flat[0] = 1.0
    f = lambda: L.softmax_xent_forward(logits, ids, mask)[0]
    out["softmax_xent"] = rel_error(L.softmax_xent_backward(L.softmax_xent_forward(logits, ids, mask)[1]),
                                    numeric_grad(f, logits))

    H = int(rng.choice([h for h in (1, 2) if d % h == 0]))
    ow, ob = rng.normal(size=(H, d // H, 2)), rng.normal(size=(H, 2))
    proj = rng.normal(size=(B, n, H, 2))
    f = lambda: float((L.offsets_generate(x, ow, ob, H)[0] * proj).sum())
    gx, gw, gb = L.offsets_backward(proj, L.offsets_generate(x, ow, ob, H)[1])
    out["offsets"] = max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, ow)),
                         rel_error(gb, numeric_grad(f, ob)))
    return out


def block_signature(saved: L.BlockSaved):
    s = saved.caches["talk"]
    return (s.left_lo.tobytes(), s.right_lo.tobytes(), s.clamp_l.tobytes(), s.clamp_r.tobytes())


def check_block(rng, n=8, d=8, d_ff=16) -> dict[str, float]:
    H = int(rng.choice([1, 2]))
    cfg = L.BlockConfig(
        talk=TaLKConfig(d=d, heads=H, l_max=int(rng.integers(1, 4)), r_max=int(rng.integers(0, 4)),
                        normalize=bool(rng.integers(0, 2))),
        d_ff=d_ff, glu=bool(rng.integers(0, 2)), causal=bool(rng.integers(0, 2)),
        prenorm=bool(rng.integers(0, 2)),
    )
    params = L.init_block(cfg, rng)
    # non-trivial offsets and norms so every path carries signal
    params["off.b"] = rng.normal(size=params["off.b"].shape)
    params["ln1.g"] = rng.normal(1.0, 0.2, size=d)
    params["ln2.g"] = rng.normal(1.0, 0.2, size=d)
    x = rng.normal(size=(2, n, d))
    proj = rng.normal(size=(2, n, d))
    state = {}

    def f():
        y, s = L.talk_block_forward(x, params, cfg)
        state["saved"] = s
        return float((y * proj).sum())

    sig = lambda: block_signature(state["saved"])
    _, saved = L.talk_block_forward(x, params, cfg)
    gx, grads = L.talk_block_backward(proj, saved)
    errs = {"block.x": rel_error(gx, numeric_grad(f, x, signature=sig))}
    for k, v in params.items():
        errs[f"block.{k}"] = rel_error(grads[k], numeric_grad(f, v, signature=sig))
    return {"block": max(errs.values()), **{k: e for k, e in errs.items() if e > BLOCK_TOL}}


# --- driver ----------------------------------------------------------------

@dataclass
class GradcheckReport:
    worst: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    trials: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"{k:24s} worst_rel_err={v:.3e}" for k, v in sorted(self.worst.items())]
        out.append(f"trials={self.trials} status={'PASS' if self.passed else 'FAIL'}")
        out.extend(f"FAILED {f}" for f in self.failures)
        return out


def tolerance(name: str) -> float:
    if name.startswith("block"):
        return BLOCK_TOL
    if name == "talk.clamped_nonzero":
        return 0.0
    return KERNEL_TOL if name.startswith("talk") else LAYER_TOL


def run_gradcheck(seed: int = 0, trials: int = 50, kernel_backward=talk_backward) -> GradcheckReport:
    """Cycle kernel / layer / block checks over ``trials`` random instances."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = GradcheckReport(trials=trials)
    checks = (lambda r: check_talk_kernel(r, kernel_backward), check_layers, check_block)
    for t in range(trials):
        for name, err in checks[t % 3](rng).items():
            report.worst[name] = max(report.worst.get(name, 0.0), err)
            if not err <= tolerance(name):
                report.failures.append(f"trial {t}: {name} rel_err={err:.3e}")
    return report
