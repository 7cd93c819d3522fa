"""Differentiable primitives.

Each primitive computes its forward value with numpy (or a kernel lane),
checks the result for NaN/Inf, and, when a tape is active and an input is
tracked, records a closure that maps the output gradient to per-input
gradients. Binary elementwise primitives broadcast like numpy; their
backward passes sum the broadcast axes back out.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    active_tape,
    finite_checks_enabled,
)

__all__ = [
    "matmul", "add", "sub", "mul", "neg", "concat", "slice_along",
    "mean", "sum_", "transpose", "reshape", "broadcast_to", "softmax",
    "layer_norm", "relu", "sigmoid", "scale", "square", "log", "exp",
    "gradient_reverse", "stop_gradient",
]

LAYER_NORM_EPS = 1e-5


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name, arr):
    if not finite_checks_enabled():
        return
    # Cheap screen first; the screen can trip on benign overflow of the
    # sum itself, so confirm with the exact check before raising.
    s = arr.sum()
    if not np.isfinite(s) and not np.isfinite(arr).all():
        raise NumericError(f"{name}: non-finite values in result")


def _emit(name, out_data, inputs, vjp):
    # 0-d numpy results come back as scalars; rewrap as arrays so the
    # tensor keeps the computation dtype instead of the f64 default.
    out_data = np.asarray(out_data)
    _check_finite(name, out_data)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        tracked = tuple(tape.tracks(t) for t in inputs)
        if any(tracked):
            tape.record(out, inputs, tracked, vjp, name)
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _rows(arr):
    """C-contiguous (rows, width) view of the last axis."""
    a = np.ascontiguousarray(arr)
    return a.reshape(-1, a.shape[-1])


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: operands must have ndim >= 2, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}: {err}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), vjp)


def _binary(name, a, b, fwd, dfa, dfb):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{name}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None
    out = fwd(a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            _unbroadcast(dfa(g, ad, bd), ad.shape),
            _unbroadcast(dfb(g, ad, bd), bd.shape),
        )

    return _emit(name, out, (a, b), vjp)


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    return _binary(
        "mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x
    )


def neg(x):
    x = _as_tensor(x)
    return _emit("neg", -x.data, (x,), lambda g: (-g,))


def concat(tensors, axis):
    """Concatenate along ``axis``."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    ax = axis % out.ndim
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return _emit("concat", out, tuple(ts), vjp)


def slice_along(x, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    x = _as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= start <= stop <= n):
        raise ShapeError(
            f"slice_along: [{start}:{stop}) out of range for axis {axis} "
            f"of shape {x.shape}"
        )
    idx = tuple(
        slice(start, stop) if i == ax else slice(None) for i in range(x.ndim)
    )
    out = x.data[idx]
    xd = x.data

    def vjp(g):
        gx = np.zeros_like(xd)
        gx[idx] = g
        return (gx,)

    return _emit("slice_along", out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    """Arithmetic mean over an axis (or all elements)."""
    x = _as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        count = shape[axis % x.ndim]

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy() / count,)

    return _emit("mean", np.asarray(out), (x,), vjp)


def sum_(x, axis=None, keepdims=False):
    """Sum over an axis (or all elements)."""
    x = _as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), vjp)


def transpose(x, axes=None):
    """Permute axes (numpy semantics; None reverses)."""
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _emit("transpose", out, (x,), vjp)


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        out = np.reshape(x.data, shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {err}") from None
    orig = x.shape

    def vjp(g):
        return (np.reshape(g, orig),)

    return _emit("reshape", out, (x,), vjp)


def broadcast_to(x, shape):
    x = _as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as err:
        raise ShapeError(f"broadcast_to: {err}") from None
    orig = x.shape

    def vjp(g):
        return (_unbroadcast(g, orig),)

    return _emit("broadcast_to", out, (x,), vjp)


def softmax(x):
    """Softmax over the last axis."""
    x = _as_tensor(x)
    y2 = kernels.softmax_fwd(_rows(x.data))
    out = y2.reshape(x.shape)

    def vjp(g):
        g2 = _rows(g)
        return (kernels.softmax_bwd(g2, y2).reshape(g.shape),)

    return _emit("softmax", out, (x,), vjp)


def layer_norm(x, eps=LAYER_NORM_EPS):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    x = _as_tensor(x)
    y2, inv_std = kernels.layer_norm_fwd(_rows(x.data), eps)
    out = y2.reshape(x.shape)

    def vjp(g):
        g2 = _rows(g)
        return (kernels.layer_norm_bwd(g2, y2, inv_std).reshape(g.shape),)

    return _emit("layer_norm", out, (x,), vjp)


def relu(x):
    x = _as_tensor(x)
    y = kernels.relu_fwd(np.ascontiguousarray(x.data))

    def vjp(g):
        return (kernels.relu_bwd(np.ascontiguousarray(g), y),)

    return _emit("relu", y, (x,), vjp)


def sigmoid(x):
    x = _as_tensor(x)
    y = kernels.sigmoid_fwd(np.ascontiguousarray(x.data))

    def vjp(g):
        return (kernels.sigmoid_bwd(np.ascontiguousarray(g), y),)

    return _emit("sigmoid", y, (x,), vjp)


def scale(x, c):
    """Multiply by a python scalar."""
    x = _as_tensor(x)
    c = float(c)
    if not np.isfinite(c):
        raise NumericError(f"scale: non-finite factor {c}")

    def vjp(g):
        return (g * c,)

    return _emit("scale", x.data * c, (x,), vjp)


def square(x):
    x = _as_tensor(x)
    xd = x.data

    def vjp(g):
        return (2.0 * xd * g,)

    return _emit("square", xd * xd, (x,), vjp)


def log(x):
    """Natural log; non-positive inputs surface as a numeric error."""
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    xd = x.data

    def vjp(g):
        return (g / xd,)

    return _emit("log", out, (x,), vjp)


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)

    def vjp(g):
        return (g * y,)

    return _emit("exp", y, (x,), vjp)


def gradient_reverse(x, lam=1.0):
    """Identity forward; backward multiplies the gradient by -lam.

    The forward result shares the input's array, so bit-identity is exact.
    ``lam`` must be positive.
    """
    x = _as_tensor(x)
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError(f"gradient_reverse: lam must be > 0, got {lam}")

    def vjp(g):
        return (-lam * g,)

    out = Tensor(x.data)
    tape = active_tape()
    if tape is not None and tape.tracks(x):
        tape.record(out, (x,), (True,), vjp, "gradient_reverse")
    return out


def stop_gradient(x):
    """Identity forward; blocks gradient flow (never recorded)."""
    x = _as_tensor(x)
    return Tensor(x.data)
