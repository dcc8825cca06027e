import numpy as np
import pytest

from talkconv import layers as L
from talkconv.gradcheck import check_block, check_layers
from talkconv.talk_kernel import ConfigError, TaLKConfig


def test_offsets_zero_weights_give_half(rng):
    x = rng.normal(size=(2, 5, 8))
    rel, _ = L.offsets_generate(x, np.zeros((2, 4, 2)), np.zeros((2, 2)), 2)
    assert rel.shape == (2, 5, 2, 2)
    assert np.all(rel == 0.5)


def test_offsets_saturate_with_large_bias(rng):
    x = rng.normal(size=(1, 4, 4)) * 0.1
    rel, _ = L.offsets_generate(x, np.zeros((1, 4, 2)), np.full((1, 2), 20.0), 1)
    assert rel.shape == (1, 4, 1, 2)
    assert np.all(rel > 1 - 1e-8)


def test_offsets_heads_must_divide(rng):
    with pytest.raises(ConfigError):
        L.offsets_generate(rng.normal(size=(1, 2, 6)), np.zeros((4, 1, 2)), np.zeros((4, 2)), 4)


def test_offsets_dropout_identities(rng):
    rel = rng.uniform(0, 1, (2, 6, 2, 2))
    out, keep = L.offsets_dropout(rel, 0.0, rng, training=True)
    assert out is rel and keep is None
    out, keep = L.offsets_dropout(rel, 0.7, rng, training=False)
    assert out is rel and keep is None
    with pytest.raises(ConfigError):
        L.offsets_dropout(rel, 1.0, rng, training=True)
    with pytest.raises(ConfigError):
        L.offsets_dropout(rel, -0.1, rng, training=True)


def test_offsets_dropout_rate(rng):
    rel = np.full((1, 2500, 2, 2), 0.5)
    out, keep = L.offsets_dropout(rel, 0.5, rng, training=True)
    assert abs(1 - keep.mean() - 0.5) < 0.02
    assert set(np.unique(out)) <= {0.0, 0.5}


def test_swish_and_glu_values():
    y, _ = L.swish_forward(np.array([0.0, 50.0]))
    assert y[0] == 0.0 and np.isclose(y[1], 50.0)
    a = np.array([[[1.0, -2.0, 0.0, 0.0]]])
    out, _ = L.glu_forward(a)
    assert np.array_equal(out, [[[0.5, -1.0]]])


def test_layernorm_normalizes(rng):
    x = rng.normal(3.0, 5.0, size=(2, 4, 16))
    y, _ = L.layernorm_forward(x, np.ones(16), np.zeros(16))
    assert np.allclose(y.mean(-1), 0, atol=1e-12)
    assert np.allclose(y.std(-1), 1, atol=1e-3)


def test_softmax_xent_uniform_logits():
    loss, _ = L.softmax_xent_forward(np.zeros((1, 3, 8)), np.array([[1, 2, 3]]), np.ones((1, 3)))
    assert np.isclose(loss, np.log(8))


@pytest.mark.parametrize("seed", range(4))
def test_layer_gradients(seed):
    errs = check_layers(np.random.default_rng(seed))
    assert max(errs.values()) < 1e-6, errs


@pytest.mark.parametrize("seed", range(3))
def test_block_gradients(seed):
    errs = check_block(np.random.default_rng(seed))
    assert errs["block"] < 1e-5, errs


def make_block(rng, **kw):
    talk = TaLKConfig(d=8, heads=2, l_max=3, r_max=2, **{k: kw.pop(k) for k in ("normalize", "p_drop") if k in kw})
    cfg = L.BlockConfig(talk=talk, d_ff=16, **kw)
    return cfg, L.init_block(cfg, rng)


def test_block_shape_and_determinism(rng):
    cfg, params = make_block(rng, p_drop=0.1, dropout=0.1)
    x = rng.normal(size=(2, 7, 8))
    y, _ = L.talk_block_forward(x, params, cfg)
    assert y.shape == x.shape
    y1, _ = L.talk_block_forward(x, params, cfg, training=True, rng=np.random.default_rng(5))
    y2, _ = L.talk_block_forward(x, params, cfg, training=True, rng=np.random.default_rng(5))
    assert np.array_equal(y1, y2)
    assert np.array_equal(L.talk_block_forward(x, params, cfg)[0], y)


def test_block_collapses_to_residual_plus_ffn(rng):
    cfg, params = make_block(rng, glu=False, normalize=False)
    params["in.w"], params["in.b"] = np.eye(8), np.zeros(8)
    params["out.w"], params["out.b"] = np.eye(8), np.zeros(8)
    params["off.b"] = np.full((2, 2), -50.0)   # offsets ~ 0: window is the token itself
    params["off.w"][:] = 0
    x = rng.normal(size=(1, 6, 8))
    z, _ = L.talk_block_forward(x, params, cfg)
    h, _ = L.layernorm_forward(x, params["ln1.g"], params["ln1.b"])
    y = x + h
    f, _ = L.layernorm_forward(y, params["ln2.g"], params["ln2.b"])
    f = L.swish_forward(f @ params["ff1.w"] + params["ff1.b"])[0] @ params["ff2.w"] + params["ff2.b"]
    assert np.allclose(z, y + f, atol=1e-10)


def test_causal_block_ignores_future(rng):
    cfg, params = make_block(rng, causal=True)
    x = rng.normal(size=(1, 10, 8))
    base, _ = L.talk_block_forward(x, params, cfg)
    x[0, 6:] += 3.0
    out, _ = L.talk_block_forward(x, params, cfg)
    assert np.array_equal(out[0, :6], base[0, :6])


def test_unnormalized_stack_grows_with_depth(rng):
    """Wide windows without the 1/(l+r+1) scale inflate the residual stream."""
    d, n = 16, 64

    def depth_norms(normalize):
        talk = TaLKConfig(d=d, heads=1, l_max=15, r_max=15, normalize=normalize)
        cfg = L.BlockConfig(talk=talk, d_ff=32, glu=False)
        r = np.random.default_rng(0)
        x = r.normal(size=(1, n, d))
        norms = []
        for _ in range(4):
            p = L.init_block(cfg, r)
            p["off.b"][:] = 20.0       # offsets ~ 1: widest windows
            p["in.w"] = np.eye(d)
            p["out.w"] = np.eye(d)
            x, _ = L.talk_block_forward(x, p, cfg)
            norms.append(np.abs(x).mean())
        return norms

    raw, scaled = depth_norms(False), depth_norms(True)
    assert all(b > a for a, b in zip(raw, raw[1:]))
    assert raw[-1] > 10 * scaled[-1]
