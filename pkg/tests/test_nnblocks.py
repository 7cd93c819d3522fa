"""Attention blocks against brute-force oracles; parameter bookkeeping."""
import math

import numpy as np
import pytest

from lnln import nnblocks as nb
from lnln.diffcore import ShapeError, Tensor


def _mha_reference(x, kv, params, heads):
    """Per-head attention written with plain loops."""
    q = x @ params["q.w"] + params["q.b"]
    k = kv @ params["k.w"] + params["k.b"]
    v = kv @ params["v.w"] + params["v.b"]
    dim = q.shape[-1]
    dh = dim // heads
    out = np.zeros_like(q)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        out[:, sl] = w @ v[:, sl]
    return out @ params["out.w"] + params["out.b"]


def _params_of(store, prefix):
    sd = store.state_dict()
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in sd.items() if k.startswith(prefix + ".")}


def test_attention_matches_brute_force_per_head():
    rng = np.random.default_rng(0)
    store = nb.ParamStore()
    mha = nb.MultiHeadAttention(store, "mha", rng, 8, 2)
    x = rng.standard_normal((4, 8))
    got = mha(Tensor(x), Tensor(x)).data
    want = _mha_reference(x, x, _params_of(store, "mha"), 2)
    assert np.abs(got - want).max() < 1e-10


def test_cross_attention_matches_brute_force():
    rng = np.random.default_rng(1)
    store = nb.ParamStore()
    mha = nb.MultiHeadAttention(store, "mha", rng, 6, 3)
    q = rng.standard_normal((2, 6))
    kv = rng.standard_normal((5, 6))
    got = mha(Tensor(q), Tensor(kv)).data
    want = _mha_reference(q, kv, _params_of(store, "mha"), 3)
    assert np.abs(got - want).max() < 1e-10


def test_attention_single_kv_copies_its_value():
    # with one key/value row, softmax weights are exactly 1 and the
    # output is that row's value projection (plus output projection)
    rng = np.random.default_rng(2)
    store = nb.ParamStore()
    mha = nb.MultiHeadAttention(store, "mha", rng, 8, 2)
    q = rng.standard_normal((3, 8))
    kv = rng.standard_normal((1, 8))
    got = mha(Tensor(q), Tensor(kv)).data
    p = _params_of(store, "mha")
    v = kv @ p["v.w"] + p["v.b"]
    want = np.tile(v @ p["out.w"] + p["out.b"], (3, 1))
    assert np.abs(got - want).max() < 1e-12


def test_attention_is_invariant_to_kv_row_order():
    rng = np.random.default_rng(3)
    store = nb.ParamStore()
    mha = nb.MultiHeadAttention(store, "mha", rng, 8, 4)
    q = rng.standard_normal((3, 8))
    kv = rng.standard_normal((7, 8))
    base = mha(Tensor(q), Tensor(kv)).data
    perm = rng.permutation(7)
    shuffled = mha(Tensor(q), Tensor(kv[perm])).data
    assert np.abs(base - shuffled).max() < 1e-12


def test_attention_batched_equals_unbatched():
    rng = np.random.default_rng(4)
    store = nb.ParamStore()
    mha = nb.MultiHeadAttention(store, "mha", rng, 8, 2)
    x = rng.standard_normal((3, 5, 8))
    batched = mha(Tensor(x), Tensor(x)).data
    for i in range(3):
        single = mha(Tensor(x[i]), Tensor(x[i])).data
        assert np.abs(batched[i] - single).max() < 1e-12


def test_attention_rejects_indivisible_heads():
    store = nb.ParamStore()
    with pytest.raises(ValueError):
        nb.MultiHeadAttention(store, "mha", np.random.default_rng(0), 8, 3)


def test_encoder_layer_with_zeroed_projections_is_identity():
    rng = np.random.default_rng(5)
    store = nb.ParamStore()
    enc = nb.EncoderLayer(store, "enc", rng, 8, 2)
    enc.attn.proj_out.w.data[:] = 0.0
    enc.ffn_out.w.data[:] = 0.0
    x = rng.standard_normal((6, 8))
    out = enc(Tensor(x)).data
    assert np.array_equal(out, x)


def test_encoder_layer_changes_distinct_inputs_differently():
    rng = np.random.default_rng(6)
    store = nb.ParamStore()
    enc = nb.EncoderLayer(store, "enc", rng, 8, 2)
    a = enc(Tensor(rng.standard_normal((4, 8)))).data
    b = enc(Tensor(rng.standard_normal((4, 8)))).data
    assert np.abs(a - b).max() > 1e-3


def test_token_embedder_output_extent_is_token_count():
    rng = np.random.default_rng(7)
    for seq_len in (1, 4, 9, 33):
        store = nb.ParamStore()
        emb = nb.TokenEmbedder(store, "emb", rng, 5, 16, tokens=3, heads=2)
        u = rng.standard_normal((seq_len, 5))
        out = emb(Tensor(u))
        assert out.shape == (3, 16)
        batched = emb(Tensor(np.stack([u, u])))
        assert batched.shape == (2, 3, 16)
        assert np.abs(batched.data[0] - out.data).max() < 1e-12


def test_token_embedder_depends_on_input_content():
    rng = np.random.default_rng(8)
    store = nb.ParamStore()
    emb = nb.TokenEmbedder(store, "emb", rng, 5, 16, tokens=3, heads=2)
    a = emb(Tensor(rng.standard_normal((6, 5)))).data
    b = emb(Tensor(rng.standard_normal((6, 5)))).data
    assert np.abs(a - b).max() > 1e-4


def test_learnable_token_init_scale():
    rng = np.random.default_rng(9)
    store = nb.ParamStore()
    tok = nb.LearnableToken(store, "tok", rng, 64, 64)
    sd = tok.value.data.std()
    assert 0.015 < sd < 0.025
    like = Tensor(np.zeros((7, 5, 64)))
    assert tok.matched_to(like).shape == (7, 64, 64)


def test_param_store_names_are_ordered_and_unique():
    rng = np.random.default_rng(10)
    store = nb.ParamStore()
    nb.Affine(store, "a", rng, 3, 4)
    nb.Affine(store, "b", rng, 4, 5)
    assert store.names() == ["a.w", "a.b", "b.w", "b.b"]
    assert store.count() == 3 * 4 + 4 + 4 * 5 + 5
    with pytest.raises(ValueError, match="duplicate"):
        store.add("a.w", np.zeros((3, 4)))


def test_param_store_state_round_trip():
    rng = np.random.default_rng(11)
    store = nb.ParamStore()
    aff = nb.Affine(store, "a", rng, 3, 4)
    before = store.state_dict()
    aff.w.data[:] = 0.0
    store.load_state_dict(before)
    assert np.array_equal(aff.w.data, before["a.w"])
    # the snapshot is a copy, not a view
    before["a.w"][:] = 99.0
    assert not np.array_equal(aff.w.data, before["a.w"])


def test_param_store_load_rejects_mismatches():
    rng = np.random.default_rng(12)
    store = nb.ParamStore()
    nb.Affine(store, "a", rng, 3, 4)
    good = store.state_dict()
    with pytest.raises(KeyError, match="missing"):
        store.load_state_dict({})
    extra = dict(good, ghost=np.zeros(1))
    with pytest.raises(KeyError, match="unexpected"):
        store.load_state_dict(extra)
    bad = dict(good)
    bad["a.w"] = np.zeros((4, 3))
    with pytest.raises(ShapeError, match="a.w"):
        store.load_state_dict(bad)


def test_param_store_respects_dtype():
    rng = np.random.default_rng(13)
    store = nb.ParamStore(dtype=np.float32)
    aff = nb.Affine(store, "a", rng, 3, 4)
    assert aff.w.dtype == np.float32
    assert store.get("a.b").dtype == np.float32


def test_xavier_uniform_bounds():
    rng = np.random.default_rng(14)
    w = nb.xavier_uniform(rng, 30, 50)
    limit = math.sqrt(6.0 / 80)
    assert w.shape == (30, 50)
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.8 * limit
