"""Attention blocks, token-prefixed encoders, and parameter bookkeeping.

Everything here works on either unbatched (L, d) or batched (B, L, d)
sequences; parameters are float tensors registered in a ParamStore under
hierarchical dotted names so checkpoints are name/shape addressable.
"""

from __future__ import annotations

import math

import numpy as np

from .diffcore import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    slice_along,
    softmax,
    transpose,
)

TOKEN_INIT_STD = 0.02


class ParamStore:
    """Ordered registry of leaf tensors keyed by dotted names."""

    def __init__(self, dtype=np.float64):
        self._params: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def names(self):
        return list(self._params)

    def leaves(self):
        return list(self._params.values())

    def get(self, name):
        return self._params[name]

    def count(self):
        return sum(t.size for t in self._params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state):
        """Replace all parameter values; names and shapes must match exactly."""
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(
                f"state dict mismatch: missing={sorted(missing)} "
                f"unexpected={sorted(unexpected)}"
            )
        for name, tensor in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != tensor.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != "
                    f"model shape {tensor.data.shape}"
                )
            # always copy: the caller's dict must not alias live params
            tensor.data = np.array(arr, dtype=self.dtype, order="C")


def xavier_uniform(rng, fan_in, fan_out):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Affine:
    """y = x @ w + b with Xavier-uniform w and zero b."""

    def __init__(self, store, name, rng, fan_in, fan_out):
        self.w = store.add(f"{name}.w", xavier_uniform(rng, fan_in, fan_out))
        self.b = store.add(f"{name}.b", np.zeros(fan_out))

    def __call__(self, x):
        return add(matmul(x, self.w), self.b)


def _split_heads(x, heads):
    # (..., L, d) -> (..., h, L, d/h)
    *lead, length, dim = x.shape
    h = reshape(x, (*lead, length, heads, dim // heads))
    nd = h.ndim
    perm = (*range(nd - 3), nd - 2, nd - 3, nd - 1)
    return transpose(h, perm)


def _merge_heads(x):
    # (..., h, L, dh) -> (..., L, h*dh)
    nd = x.ndim
    perm = (*range(nd - 3), nd - 2, nd - 3, nd - 1)
    t = transpose(x, perm)
    *lead, length, heads, dh = t.shape
    return reshape(t, (*lead, length, heads * dh))


def _swap_last(x):
    nd = x.ndim
    return transpose(x, (*range(nd - 2), nd - 1, nd - 2))


class MultiHeadAttention:
    """Scaled dot-product attention with per-head splitting.

    ``query`` and ``keyvalue`` may come from different sequences
    (cross-attention); scores are scaled by 1/sqrt(d/h).
    """

    def __init__(self, store, name, rng, dim, heads):
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.proj_q = Affine(store, f"{name}.q", rng, dim, dim)
        self.proj_k = Affine(store, f"{name}.k", rng, dim, dim)
        self.proj_v = Affine(store, f"{name}.v", rng, dim, dim)
        self.proj_out = Affine(store, f"{name}.out", rng, dim, dim)

    def __call__(self, query, keyvalue):
        q = _split_heads(self.proj_q(query), self.heads)
        k = _split_heads(self.proj_k(keyvalue), self.heads)
        v = _split_heads(self.proj_v(keyvalue), self.heads)
        scores = scale(matmul(q, _swap_last(k)), 1.0 / math.sqrt(self.dim / self.heads))
        ctx = matmul(softmax(scores), v)
        return self.proj_out(_merge_heads(ctx))


def _ln_affine(x, gain, bias):
    return add(mul(layer_norm(x), gain), bias)


class EncoderLayer:
    """Pre-norm transformer layer: x += MHA(LN(x)); x += FFN(LN(x)).

    With zeroed output/second-FFN projections the layer is an exact
    identity. ``keyvalue`` switches self-attention to cross-attention;
    only the query stream is normalized, kv enters raw.
    """

    def __init__(self, store, name, rng, dim, heads, ffn_mult=4):
        self.attn = MultiHeadAttention(store, f"{name}.attn", rng, dim, heads)
        self.ln1_gain = store.add(f"{name}.ln1.gain", np.ones(dim))
        self.ln1_bias = store.add(f"{name}.ln1.bias", np.zeros(dim))
        self.ln2_gain = store.add(f"{name}.ln2.gain", np.ones(dim))
        self.ln2_bias = store.add(f"{name}.ln2.bias", np.zeros(dim))
        self.ffn_in = Affine(store, f"{name}.ffn.in", rng, dim, ffn_mult * dim)
        self.ffn_out = Affine(store, f"{name}.ffn.out", rng, ffn_mult * dim, dim)

    def __call__(self, x, keyvalue=None):
        normed = _ln_affine(x, self.ln1_gain, self.ln1_bias)
        kv = normed if keyvalue is None else keyvalue
        x = add(x, self.attn(normed, kv))
        normed = _ln_affine(x, self.ln2_gain, self.ln2_bias)
        return add(x, self.ffn_out(relu(self.ffn_in(normed))))


class LearnableToken:
    """Learnable (rows, dim) prompt initialized N(0, 0.02^2)."""

    def __init__(self, store, name, rng, rows, dim):
        self.value = store.add(
            name, rng.standard_normal((rows, dim)) * TOKEN_INIT_STD
        )
        self.rows = rows
        self.dim = dim

    def matched_to(self, like):
        """The token broadcast to the leading (batch) dims of ``like``."""
        if like.ndim == 2:
            return self.value
        lead = like.shape[:-2]
        t = reshape(self.value, (1,) * len(lead) + self.value.shape)
        return broadcast_to(t, (*lead, self.rows, self.dim))


class TokenEmbedder:
    """Token-prefixed modality embedding.

    Prepends learnable token rows to the native-width sequence, projects
    to the model width, runs two encoder layers, and returns the token
    positions (first ``tokens`` rows) of the result.
    """

    def __init__(self, store, name, rng, native_dim, width, tokens, heads,
                 ffn_mult=4):
        self.token = LearnableToken(store, f"{name}.token", rng, tokens, native_dim)
        self.proj = Affine(store, f"{name}.proj", rng, native_dim, width)
        self.enc1 = EncoderLayer(store, f"{name}.enc1", rng, width, heads, ffn_mult)
        self.enc2 = EncoderLayer(store, f"{name}.enc2", rng, width, heads, ffn_mult)
        self.tokens = tokens

    def __call__(self, u):
        seq = concat([self.token.matched_to(u), u], axis=-2)
        h = self.enc2(self.enc1(self.proj(seq)))
        return slice_along(h, -2, 0, self.tokens)
