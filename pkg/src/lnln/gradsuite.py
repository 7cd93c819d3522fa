"""Finite-difference verification suites for the engine and the model.

Two entry points: ``run_primitive_suite`` checks every differentiable
primitive against central differences on randomized small inputs, and
``run_model_loss_check`` pushes the full training loss through a small
model and checks every parameter leaf (with seeded coordinate
subsampling to bound runtime).

The gradient-reversal and stop-gradient primitives are deliberately NOT
finite-difference-checkable: their backward maps are not the derivative
of their (identity) forward. They are covered by exact algebraic tests
instead.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import LossWeights, ModelConfig
from .model import LnlnModel
from .training import BatchTargets, loss_components, total_loss


def _weighted(op, rng):
    """Wrap ``op`` with a scalar readout through fixed random weights.

    The weights are drawn once (first call) and cached, so the returned
    fn is a pure function of its leaves, as grad_check requires, while
    still exercising non-uniform output gradients.
    """
    cache = {}

    def fn(*leaves):
        out = op(*leaves)
        w = cache.get("w")
        if w is None:
            w = cache["w"] = dc.Tensor(rng.standard_normal(out.shape))
        return dc.sum_(dc.mul(out, w))

    return fn


def _leaf(rng, shape, transform=None):
    x = rng.standard_normal(shape)
    if transform is not None:
        x = transform(x)
    return dc.Tensor(x, requires_grad=True)


def primitive_cases(rng):
    """One randomized (fn, leaves) pair per differentiable primitive."""
    away = lambda x: x + np.sign(x) * 0.1  # keep clear of the relu kink
    cases = {}

    cases["matmul"] = (
        _weighted(dc.matmul, rng), [_leaf(rng, (2, 3)), _leaf(rng, (3, 4))]
    )
    cases["matmul_batched"] = (
        _weighted(dc.matmul, rng), [_leaf(rng, (2, 2, 3)), _leaf(rng, (3, 4))]
    )

    for name, op in (("add", dc.add), ("sub", dc.sub), ("mul", dc.mul)):
        cases[name] = (
            _weighted(op, rng), [_leaf(rng, (2, 3)), _leaf(rng, (2, 3))]
        )
        cases[f"{name}_broadcast"] = (
            _weighted(op, rng), [_leaf(rng, (2, 1)), _leaf(rng, (1, 3))]
        )

    cases["neg"] = (_weighted(dc.neg, rng), [_leaf(rng, (2, 4))])
    cases["relu"] = (_weighted(dc.relu, rng), [_leaf(rng, (2, 4), away)])
    cases["sigmoid"] = (_weighted(dc.sigmoid, rng), [_leaf(rng, (2, 4))])
    cases["exp"] = (_weighted(dc.exp, rng), [_leaf(rng, (2, 4))])
    cases["log"] = (
        _weighted(dc.log, rng),
        [_leaf(rng, (2, 4), lambda x: np.abs(x) + 0.5)],
    )
    cases["square"] = (_weighted(dc.square, rng), [_leaf(rng, (2, 4))])
    cases["scale"] = (
        _weighted(lambda x: dc.scale(x, 1.7), rng), [_leaf(rng, (2, 4))]
    )

    cases["concat"] = (
        _weighted(lambda *xs: dc.concat(list(xs), axis=0), rng),
        [_leaf(rng, (2, 3)), _leaf(rng, (2, 3)), _leaf(rng, (1, 3))],
    )
    cases["concat_lastaxis"] = (
        _weighted(lambda x, y: dc.concat([x, y], axis=-1), rng),
        [_leaf(rng, (2, 3)), _leaf(rng, (2, 2))],
    )
    cases["slice_along"] = (
        _weighted(lambda x: dc.slice_along(x, -2, 1, 3), rng),
        [_leaf(rng, (4, 3))],
    )
    cases["mean_all"] = (lambda x: dc.mean(x), [_leaf(rng, (3, 4))])
    cases["mean_axis"] = (
        _weighted(lambda x: dc.mean(x, axis=-2), rng), [_leaf(rng, (3, 4))]
    )
    cases["sum_all"] = (lambda x: dc.sum_(x), [_leaf(rng, (3, 4))])
    cases["sum_axis_keepdims"] = (
        _weighted(lambda x: dc.sum_(x, axis=1, keepdims=True), rng),
        [_leaf(rng, (3, 4))],
    )
    cases["transpose"] = (
        _weighted(lambda x: dc.transpose(x, (1, 2, 0)), rng),
        [_leaf(rng, (2, 3, 4))],
    )
    cases["reshape"] = (
        _weighted(lambda x: dc.reshape(x, (3, 4)), rng), [_leaf(rng, (2, 6))]
    )
    cases["broadcast_to"] = (
        _weighted(lambda x: dc.broadcast_to(x, (4, 3)), rng),
        [_leaf(rng, (1, 3))],
    )
    cases["softmax"] = (
        _weighted(dc.softmax, rng), [_leaf(rng, (3, 5), lambda x: 2.0 * x)]
    )
    cases["layer_norm"] = (
        _weighted(dc.layer_norm, rng), [_leaf(rng, (3, 6))]
    )
    return cases


def run_primitive_suite(trials=100, seed=0, eps=1e-5):
    """Max FD error per primitive over randomized trials.

    Returns {primitive: max relative error}. Every trial re-randomizes
    shapes' contents (not shapes) and readout weights.
    """
    results = {}
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), trial)))
        for name, (fn, leaves) in primitive_cases(rng).items():
            err = dc.grad_check(fn, leaves, eps=eps)
            if err > results.get(name, 0.0):
                results[name] = err
    return results


def small_model_loss_fn(batch=2, tokens=4, width=16, seed=0):
    """A (model, fn, leaves) triple computing the full training loss.

    The model is float64 with every head enabled; inputs/targets are
    fixed random arrays, so fn is a pure function of the leaves.

    The forward pass runs with ``adversarial_transparent=True``: the
    gradient-reversal and stop-gradient nodes deliberately report a
    vector that is not the derivative of the forward map, which makes
    the production loss impossible to verify by finite differences.
    The transparent path replaces both with identity so FD applies;
    the reversal itself is covered by exact algebraic tests.
    """
    cfg = ModelConfig(
        tokens=tokens, width=width, heads=4, lang_dim=6, vis_dim=5,
        aud_dim=5, dtype="float64",
    )
    model = LnlnModel(cfg, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xF00D)))
    seq = 5
    lang = rng.standard_normal((batch, seq, cfg.lang_dim))
    vis = rng.standard_normal((batch, seq, cfg.vis_dim))
    aud = rng.standard_normal((batch, seq, cfg.aud_dim))
    targets = BatchTargets(
        y=rng.uniform(-3, 3, size=batch),
        w_label=rng.uniform(0, 1, size=batch),
        clean_lang=lang + 0.1 * rng.standard_normal(lang.shape),
        clean_vis=vis + 0.1 * rng.standard_normal(vis.shape),
        clean_aud=aud + 0.1 * rng.standard_normal(aud.shape),
    )
    weights = LossWeights()

    def fn(*_leaves):
        outputs = model.forward(lang, vis, aud, adversarial_transparent=True)
        comps = loss_components(outputs, targets, np.float64)
        return total_loss(comps, weights)

    return model, fn, model.leaves()


def run_model_loss_check(batch=2, tokens=4, width=16, seed=0, max_coords=3,
                         eps=1e-7):
    """Max FD error of the full loss over every parameter leaf.

    The step is smaller than the primitive-suite default: the full
    network routes each parameter through thousands of relu units, so
    at eps=1e-5 some coordinate usually sits within one step of a kink
    and the difference quotient is wrong by construction. At 1e-7 the
    crossings are vanishingly rare while 64-bit roundoff in the
    quotient stays near 1e-9.
    """
    _, fn, leaves = small_model_loss_fn(batch, tokens, width, seed)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC0DE)))
    return dc.grad_check(fn, leaves, eps=eps, max_coords=max_coords, rng=rng)
