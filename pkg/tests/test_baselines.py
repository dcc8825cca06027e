import math

import numpy as np
import pytest
from scipy.special import softmax

from talkconv.baselines import (BenchCore, OutOfMemory, attention_core, dynamic_conv_core,
                                oracle_diff, talk_oracle)
from talkconv.talk_kernel import TaLKConfig


def test_oracle_integer_offsets_direct_sum(rng):
    x = rng.normal(size=(1, 8, 2))
    cfg = TaLKConfig(d=2, l_max=2, r_max=2, normalize=False)
    rel = np.full((1, 8, 1, 2), 0.5)     # one step each way
    o = talk_oracle(x, rel, cfg)
    for i in range(8):
        assert np.allclose(o[0, i], x[0, max(i - 1, 0):i + 2].sum(0))


def test_oracle_zero_offsets_identity(rng):
    x = rng.normal(size=(2, 5, 4))
    assert np.array_equal(talk_oracle(x, np.zeros((2, 5, 2, 2)), TaLKConfig(d=4, heads=2, normalize=False)), x)


def test_oracle_diff_small_run():
    assert oracle_diff(seed=3, instances=40) < 1e-6
    assert oracle_diff(seed=3, instances=40, dtype=np.float32) < 1e-4


def test_attention_single_key(rng):
    x = rng.normal(size=(2, 1, 8))
    assert np.allclose(attention_core(x, heads=2), x)


def test_attention_uniform_keys_average_values(rng):
    q = rng.normal(size=(1, 5, 4))
    k = np.ones((1, 5, 4))
    v = rng.normal(size=(1, 5, 4))
    out = attention_core(q, heads=1, k=k, v=v)
    assert np.allclose(out, v.mean(axis=1, keepdims=True))


def test_attention_matches_loop(rng):
    B, n, d, H = 2, 7, 6, 3
    x = rng.normal(size=(B, n, d))
    R = d // H
    want = np.zeros_like(x)
    for b in range(B):
        for h in range(H):
            s = slice(h * R, (h + 1) * R)
            for i in range(n):
                scores = np.array([x[b, i, s] @ x[b, j, s] for j in range(n)]) / math.sqrt(R)
                w = np.exp(scores - scores.max())
                want[b, i, s] = (w / w.sum()) @ x[b, :, s]
    assert np.allclose(attention_core(x, heads=H), want, atol=1e-12)


def test_attention_budget_raises():
    with pytest.raises(OutOfMemory):
        attention_core(np.zeros((1, 100, 4), np.float32), max_bytes=1000)


def test_dynconv_width_one_identity(rng):
    x = rng.normal(size=(2, 6, 4))
    assert np.allclose(dynamic_conv_core(x, rng.normal(size=(4, 2)), 1, 2), x)


def test_dynconv_uniform_logits_window_mean(rng):
    x = rng.normal(size=(1, 9, 2))
    out = dynamic_conv_core(x, np.zeros((2, 5)), 5, 1)
    for i in range(2, 7):
        assert np.allclose(out[0, i], x[0, i - 2:i + 3].mean(0))


def test_dynconv_matches_loop(rng):
    B, n, d, H, k = 2, 8, 4, 2, 3
    x = rng.normal(size=(B, n, d))
    wg = rng.normal(size=(d, H * k))
    R = d // H
    want = np.zeros_like(x)
    for b in range(B):
        for i in range(n):
            w = softmax((x[b, i] @ wg).reshape(H, k), axis=-1)
            for h in range(H):
                for j in range(k):
                    t = i + j - k // 2
                    if 0 <= t < n:
                        want[b, i, h * R:(h + 1) * R] += w[h, j] * x[b, t, h * R:(h + 1) * R]
    assert np.allclose(dynamic_conv_core(x, wg, k, H), want, atol=1e-12)


def test_bench_core_parsing():
    assert BenchCore.parse("dynconv") == BenchCore("dynconv", 31)
    assert str(BenchCore.parse("dynconv:7")) == "dynconv:7"
    with pytest.raises(ValueError):
        BenchCore.parse("rnn")
    with pytest.raises(ValueError):
        BenchCore.parse("dynconv:4")
