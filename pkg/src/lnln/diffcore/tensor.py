"""Dense tensors with taped reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Operations from ``ops`` record onto the
innermost active ``Tape`` (a context manager); ``Tape.gradients`` replays
the recording once, in reverse, and returns one gradient array per
requested leaf. Default precision is float64; float32 can be selected
globally or per tensor for speed.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "DiffcoreError",
    "ShapeError",
    "NumericError",
    "TapeError",
    "Tensor",
    "Tape",
    "active_tape",
    "set_default_dtype",
    "get_default_dtype",
    "set_check_finite",
    "finite_checks_enabled",
]


class DiffcoreError(Exception):
    """Base class for autodiff engine errors."""


class ShapeError(DiffcoreError):
    """Operands do not conform for the requested primitive."""


class NumericError(DiffcoreError):
    """A primitive produced NaN or Inf."""


class TapeError(DiffcoreError):
    """Misuse of the recording tape."""


_state = threading.local()


def _tapes():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape():
    """Innermost active tape, or None outside any recording context."""
    stack = _tapes()
    return stack[-1] if stack else None


_DEFAULT_DTYPE = np.float64
_CHECK_FINITE = True


def set_default_dtype(dtype):
    """Set the dtype new tensors default to (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt.type


def get_default_dtype():
    return np.dtype(_DEFAULT_DTYPE)


def set_check_finite(enabled):
    """Toggle the NaN/Inf guard run after every primitive."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def finite_checks_enabled():
    return _CHECK_FINITE


class Tensor:
    """A numpy array plus a leaf flag.

    ``requires_grad=True`` marks a trainable leaf; intermediate results are
    tracked implicitly through the active tape. Tensor data is treated as
    immutable by the engine (no primitive writes in place).
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, (np.ndarray, np.floating)) and data.dtype in (
            np.dtype(np.float32),
            np.dtype(np.float64),
        ):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def to_array(self):
        """The underlying array (no copy)."""
        return self.data

    def detach(self):
        """Same data as a fresh untracked, non-leaf tensor."""
        return Tensor(self.data)

    def __repr__(self):
        flag = ", leaf" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Small amount of operator sugar; the full set lives in ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)


class _Node:
    __slots__ = ("out_id", "inputs", "tracked", "vjp", "name")

    def __init__(self, out_id, inputs, tracked, vjp, name):
        self.out_id = out_id
        self.inputs = inputs
        self.tracked = tracked
        self.vjp = vjp
        self.name = name


class Tape:
    """Recording context for one forward computation.

    Within ``with Tape() as tape:`` every primitive whose inputs touch a
    leaf (or a previously recorded result) appends one node. ``gradients``
    traverses the node list exactly once, newest to oldest, which makes
    repeated backward passes bit-identical.
    """

    def __init__(self):
        self._nodes = []
        self._tracked_ids = set()
        self._keepalive = []
        self._active = False

    def __enter__(self):
        _tapes().append(self)
        self._active = True
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tapes()
        if not stack or stack[-1] is not self:
            raise TapeError("tape exited out of order")
        stack.pop()
        self._active = False
        return False

    def tracks(self, tensor):
        return tensor.requires_grad or id(tensor) in self._tracked_ids

    def record(self, out, inputs, tracked, vjp, name):
        self._nodes.append(_Node(id(out), tuple(inputs), tuple(tracked), vjp, name))
        self._tracked_ids.add(id(out))
        self._keepalive.append(out)

    def __len__(self):
        return len(self._nodes)

    def gradients(self, loss, leaves):
        """d(loss)/d(leaf) for every leaf, in leaf order.

        ``loss`` must be a scalar recorded on this tape. Leaves that did
        not participate in the computation get zero gradients.
        """
        if not isinstance(loss, Tensor):
            raise TapeError("loss must be a Tensor")
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._tracked_ids:
            raise TapeError("loss was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g_out = grads.pop(node.out_id, None)
            if g_out is None:
                continue
            in_grads = node.vjp(g_out)
            for tensor, is_tracked, g_in in zip(node.inputs, node.tracked, in_grads):
                if not is_tracked or g_in is None:
                    continue
                tid = id(tensor)
                acc = grads.get(tid)
                if acc is None:
                    grads[tid] = g_in
                else:
                    grads[tid] = acc + g_in
        out = []
        for leaf in leaves:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            out.append(g)
        return out
