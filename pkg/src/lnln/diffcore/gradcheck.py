"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

import numpy as np

from .tensor import DiffcoreError, Tape, Tensor


def grad_check(fn, tensors, eps=1e-5, max_coords=None, rng=None):
    """Max relative error between taped and finite-difference gradients.

    ``fn`` maps the leaf tensors to a scalar Tensor and must be a pure,
    deterministic function of them. Every coordinate of every leaf is
    perturbed by ±eps (central differences) unless ``max_coords`` limits
    the per-leaf coordinate count, in which case coordinates are chosen by
    the seeded ``rng``. Error per coordinate is
    |analytic - numeric| / max(1, |numeric|); the max over all checked
    coordinates is returned. Float64 leaves only.
    """
    tensors = list(tensors)
    for t in tensors:
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise DiffcoreError("grad_check: all inputs must be leaf Tensors")
        if t.dtype != np.float64:
            raise DiffcoreError("grad_check: requires float64 leaves")

    with Tape() as tape:
        loss = fn(*tensors)
    if loss.size != 1:
        raise DiffcoreError(f"grad_check: fn must be scalar, got {loss.shape}")
    analytic = tape.gradients(loss, tensors)

    if max_coords is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.size
        if max_coords is None or n <= max_coords:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = float(fn(*tensors).data)
            flat[idx] = orig - eps
            fm = float(fn(*tensors).data)
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(gflat[idx] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
