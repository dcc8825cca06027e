import json
import math

import numpy as np
import pytest

from talkconv.talk_kernel import ConfigError
from talkconv.training import (Adam, TrainConfig, make_copy_batch, make_reverse_batch,
                               lr_schedule, train_loop)


def test_lr_endpoints():
    cfg = TrainConfig(warmup_steps=200, total_steps=1000)
    assert lr_schedule(0, cfg) == pytest.approx(1e-7)
    assert lr_schedule(200, cfg) == pytest.approx(1e-3)
    assert lr_schedule(1000, cfg) == pytest.approx(1e-7)
    lrs = [lr_schedule(s, cfg) for s in range(1001)]
    assert max(lrs) == pytest.approx(1e-3)
    assert all(b >= a for a, b in zip(lrs[:200], lrs[1:201]))
    assert all(b <= a for a, b in zip(lrs[200:], lrs[201:]))


def test_config_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=10, total_steps=10)
    with pytest.raises(ConfigError):
        TrainConfig(lr_peak=0)
    with pytest.raises(ConfigError):
        TrainConfig(l_max=[3, 7], r_max=[0])
    with pytest.raises(ConfigError):
        TrainConfig(vocab=3)


def test_config_from_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"task": "reverse", "l_max": [3, 7], "r_max": [3, 7], "total_steps": 10,
                             "warmup_steps": 2}))
    cfg = TrainConfig.from_json(p)
    assert cfg.task == "reverse" and not cfg.causal and cfg.l_max == [3, 7]
    p.write_text(json.dumps({"lr": 1}))
    with pytest.raises(ConfigError):
        TrainConfig.from_json(p)


def test_adam_zero_grad_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p)
    opt.step(p, {"w": np.zeros(2)}, 1e-3)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert opt.t == 1


def test_adam_first_step():
    g = np.array([0.3, -4.0, 1e-3])
    p = {"w": np.zeros(3)}
    Adam(p).step(p, {"w": g}, 1e-2)
    assert np.allclose(p["w"], -1e-2 * g / (np.abs(g) + 1e-8))


def test_adam_skips_non_finite():
    p = {"w": np.ones(2)}
    opt = Adam(p)
    assert not opt.step(p, {"w": np.array([np.nan, 1.0])}, 1e-2)
    assert opt.skipped == 1 and opt.t == 0
    assert np.array_equal(p["w"], [1.0, 1.0])


def test_copy_batch(rng):
    b = make_copy_batch(rng, 4, 32, 16)
    assert np.array_equal(b.targets[:, 16:], b.inputs[:, :16])
    assert np.array_equal(b.mask[:, :16], np.zeros((4, 16)))
    assert np.array_equal(b.mask[:, 16:], np.ones((4, 16)))
    assert b.inputs.max() < 16 and b.inputs[:, :16].min() >= 1
    again = make_copy_batch(np.random.default_rng(1234), 4, 32, 16)
    assert np.array_equal(again.inputs, b.inputs)
    with pytest.raises(ConfigError):
        make_copy_batch(rng, 1, 8, 3)
    with pytest.raises(ConfigError):
        make_copy_batch(rng, 1, 7, 16)


def test_reverse_batch(rng):
    b = make_reverse_batch(rng, 3, 10, 8)
    assert np.array_equal(b.targets, b.inputs[:, ::-1])
    assert b.mask.all()


def tiny(**kw):
    base = dict(task="copy", vocab=8, seq_len=8, d=16, d_ff=32, heads=2, l_max=[4], r_max=[0],
                total_steps=30, warmup_steps=5, batch_size=4, log_every=10, dtype="f64")
    base.update(kw)
    return TrainConfig(**base)


def test_train_loop_is_deterministic():
    a, b = train_loop(tiny()), train_loop(tiny())
    assert a.rows == b.rows
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_train_loop_writes_outputs(tmp_path):
    cfg = tiny(report_path=str(tmp_path / "r.csv"), checkpoint_path=str(tmp_path / "c.talk"))
    rep = train_loop(cfg)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr,accuracy"
    assert len(lines) == 1 + 3
    assert (tmp_path / "c.talk").stat().st_size > 0
    assert rep.steps_run == 30 and not rep.diverged


def test_reverse_and_char_lm_tasks_run(tmp_path):
    rep = train_loop(tiny(task="reverse", l_max=[3], r_max=[3], total_steps=10))
    assert math.isfinite(rep.final_loss)
    text = tmp_path / "t.txt"
    text.write_bytes(b"the quick brown fox jumps over the lazy dog. " * 20)
    rep = train_loop(tiny(task="char_lm", text_path=str(text), total_steps=10))
    assert math.isfinite(rep.final_loss)


def test_divergence_flag_on_exploding_lr():
    rep = train_loop(tiny(lr_peak=1e6, total_steps=130, warmup_steps=1, normalize=False))
    assert rep.rows[-1][1] > 10 * rep.initial_loss
    assert rep.diverged
