"""Kernel lane selection.

Two interchangeable lanes implement the hot kernels: a compiled Cython
extension and a pure-numpy fallback. The lane is picked once at import,
controlled by the ``LNLN_KERNELS`` environment variable:

* ``auto`` (default): compiled if the extension built, else python
* ``compiled``: require the extension, raise if unavailable
* ``python``: force the numpy fallback

``BACKEND`` records the active lane. Callers must pass C-contiguous
arrays of a single float dtype (float32 or float64); row-wise kernels
take (rows, width), elementwise ones any shape.
"""

import os

import numpy as np

from . import pynative

try:
    from . import _ckernels
except ImportError:
    _ckernels = None


def available_backends():
    """Names of the lanes importable in this environment."""
    return ("compiled", "python") if _ckernels is not None else ("python",)


_requested = os.environ.get("LNLN_KERNELS", "auto").strip().lower()
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(
        f"LNLN_KERNELS must be auto|compiled|python, got {_requested!r}"
    )
if _requested == "compiled" and _ckernels is None:
    raise ImportError(
        "LNLN_KERNELS=compiled but the compiled extension is not available"
    )

if _requested == "python" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def get_lane(name):
    """Kernel namespace for an explicit lane (used by tests/benchmarks)."""
    if name == "python":
        return _PyLane
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernel lane is not available")
        return _CLane
    raise ValueError(f"unknown kernel lane {name!r}")


class _PyLane:
    name = "python"
    softmax_fwd = staticmethod(pynative.softmax_fwd)
    softmax_bwd = staticmethod(pynative.softmax_bwd)
    layer_norm_fwd = staticmethod(pynative.layer_norm_fwd)
    layer_norm_bwd = staticmethod(pynative.layer_norm_bwd)
    relu_fwd = staticmethod(pynative.relu_fwd)
    relu_bwd = staticmethod(pynative.relu_bwd)
    sigmoid_fwd = staticmethod(pynative.sigmoid_fwd)
    sigmoid_bwd = staticmethod(pynative.sigmoid_bwd)
    adamw_step = staticmethod(pynative.adamw_step)


class _CLane:
    """Adapts the 1-d elementwise signatures of the extension to n-d.

    softmax/sigmoid forwards stay on the numpy implementations in both
    lanes: their cost is the transcendental, where numpy's vectorized
    exp/tanh beat a scalar compiled loop (measured 3-20x). The compiled
    lane covers the bandwidth-bound fused passes.
    """

    name = "compiled"

    softmax_fwd = staticmethod(pynative.softmax_fwd)
    sigmoid_fwd = staticmethod(pynative.sigmoid_fwd)

    @staticmethod
    def softmax_bwd(g, y):
        return _ckernels.softmax_bwd(g, y)

    @staticmethod
    def layer_norm_fwd(x, eps):
        return _ckernels.layer_norm_fwd(x, eps)

    @staticmethod
    def layer_norm_bwd(g, y, inv_std):
        return _ckernels.layer_norm_bwd(g, y, inv_std)

    @staticmethod
    def relu_fwd(x):
        return _ckernels.relu_fwd(x.ravel()).reshape(x.shape)

    @staticmethod
    def relu_bwd(g, y):
        return _ckernels.relu_bwd(g.ravel(), y.ravel()).reshape(g.shape)

    @staticmethod
    def sigmoid_bwd(g, y):
        return _ckernels.sigmoid_bwd(g.ravel(), y.ravel()).reshape(g.shape)

    @staticmethod
    def adamw_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
        _ckernels.adamw_step(p, g, m, v, t, lr, beta1, beta2, eps,
                             weight_decay)


_lane = get_lane(BACKEND)

softmax_fwd = _lane.softmax_fwd
softmax_bwd = _lane.softmax_bwd
layer_norm_fwd = _lane.layer_norm_fwd
layer_norm_bwd = _lane.layer_norm_bwd
relu_fwd = _lane.relu_fwd
relu_bwd = _lane.relu_bwd
sigmoid_fwd = _lane.sigmoid_fwd
sigmoid_bwd = _lane.sigmoid_bwd
adamw_step = _lane.adamw_step
