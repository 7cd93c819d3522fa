"""Numpy implementations of the hot kernels.

Every function here has a signature-compatible twin in the compiled
extension (see ``_ckernels.pyx``); the active lane is chosen in
``__init__``. Row-wise kernels take 2-d arrays of shape (rows, width);
elementwise kernels take any shape; the optimizer kernel mutates its 1-d
arrays in place.
"""

import numpy as np


def softmax_fwd(x):
    """Row-wise softmax of a (rows, width) array."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=1, keepdims=True)
    return e


def softmax_bwd(g, y):
    """Input gradient of softmax from output y and output gradient g."""
    dot = np.einsum("ij,ij->i", g, y)
    return y * (g - dot[:, None])


def layer_norm_fwd(x, eps):
    """Row-wise normalization to zero mean / unit variance.

    Returns (y, inv_std) where inv_std is the per-row 1/sqrt(var + eps)
    needed by the backward pass.
    """
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.einsum("ij,ij->i", xc, xc) / x.shape[1]
    inv_std = 1.0 / np.sqrt(var + eps)
    return xc * inv_std[:, None], inv_std


def layer_norm_bwd(g, y, inv_std):
    """Input gradient of the normalization from cached y and inv_std."""
    d = y.shape[1]
    gm = g.mean(axis=1, keepdims=True)
    gy = np.einsum("ij,ij->i", g, y) / d
    return inv_std[:, None] * (g - gm - y * gy[:, None])


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(g, y):
    # Subgradient 0 at the kink: y > 0 excludes x == 0 exactly.
    # Multiply by the bool mask; np.where is ~8x slower here.
    return g * (y > 0.0)


def sigmoid_fwd(x):
    # tanh form is overflow-free for large |x| in both float widths.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_bwd(g, y):
    return g * y * (1.0 - y)


def adamw_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam update, in place on 1-d arrays.

    Decay is applied to the parameter before the moment step (scaled by the
    current lr), then the bias-corrected Adam direction is subtracted.
    """
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    denom = np.sqrt(v / bc2)
    denom += eps
    p -= (lr / bc1) * m / denom
