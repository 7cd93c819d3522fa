"""Loss terms, optimizer, schedule, and the training loop."""
import dataclasses

import numpy as np
import pytest

from lnln import datasets
from lnln.config import LossWeights, ModelConfig, TrainConfig
from lnln.diffcore import NumericError, Tape, Tensor
from lnln.model import LnlnModel
from lnln.training import (
    AdamW,
    BatchTargets,
    bce_with_logits,
    loss_components,
    lr_schedule,
    total_loss,
    train,
)

CFG = ModelConfig(tokens=4, width=16, heads=2, ffn_mult=2,
                  lang_dim=5, vis_dim=4, aud_dim=3)


def _forward_comps(seed=0, n=2, t=5):
    rng = np.random.default_rng(seed)
    model = LnlnModel(CFG, seed=0)
    lang = rng.standard_normal((n, t, 5))
    vis = rng.standard_normal((n, t, 4))
    aud = rng.standard_normal((n, t, 3))
    targets = BatchTargets(
        y=rng.standard_normal(n),
        w_label=rng.uniform(0, 1, n),
        clean_lang=lang + 0.1, clean_vis=vis, clean_aud=aud,
    )
    out = model.forward(lang, vis, aud)
    return out, targets, loss_components(out, targets, np.float64)


def _softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def test_components_match_numpy_recomputation():
    out, targets, comps = _forward_comps()
    pred = np.mean((out.y_hat.data - targets.y) ** 2)
    assert abs(comps["prediction"].data - pred) < 1e-10

    w = out.completeness.data.ravel()
    cc = np.mean((w - targets.w_label) ** 2)
    assert abs(comps["completeness"].data - cc) < 1e-10

    zp = out.disc_proxy.data
    zl = out.disc_lang.data
    adv = 0.5 * (np.mean(_softplus(zp)) + np.mean(_softplus(-zl)))
    assert abs(comps["adversarial"].data - adv) < 1e-10

    rec = np.mean([
        np.mean((out.recon_lang.data - targets.clean_lang) ** 2),
        np.mean((out.recon_vis.data - targets.clean_vis) ** 2),
        np.mean((out.recon_aud.data - targets.clean_aud) ** 2),
    ])
    assert abs(comps["reconstruction"].data - rec) < 1e-10


def test_completeness_loss_squared_error_value():
    out, targets, _ = _forward_comps()
    out2 = dataclasses.replace(out, completeness=Tensor(np.full((2, 1), 0.5)))
    targets2 = dataclasses.replace(targets, w_label=np.full(2, 0.7))
    comps = loss_components(out2, targets2, np.float64)
    assert comps["completeness"].data == pytest.approx(0.04, abs=1e-12)


def test_total_loss_weights_components():
    ones = {k: Tensor(np.ones(())) for k in
            ("completeness", "adversarial", "reconstruction", "prediction")}
    assert total_loss(ones, LossWeights()).data == pytest.approx(2.8)
    assert total_loss(ones, LossWeights(adversarial=0.9)).data == \
        pytest.approx(2.9)
    sims = LossWeights(0.9, 0.6, 0.1, 1.0)
    assert total_loss(ones, sims).data == pytest.approx(2.6)


def test_total_loss_skips_missing_and_zero_weight_terms():
    comps = {"completeness": None, "adversarial": Tensor(np.ones(())),
             "reconstruction": Tensor(np.full((), 5.0)),
             "prediction": Tensor(np.full((), 2.0))}
    w = LossWeights(completeness=0.9, adversarial=0.0,
                    reconstruction=0.1, prediction=1.0)
    assert total_loss(comps, w).data == pytest.approx(0.5 + 2.0)
    none_at_all = {k: None for k in comps}
    assert total_loss(none_at_all, LossWeights()).data == 0.0


def test_total_loss_is_linear_in_each_component():
    base = {"completeness": None, "adversarial": None,
            "reconstruction": None, "prediction": Tensor(np.full((), 3.0))}
    w = LossWeights(prediction=0.25)
    assert total_loss(base, w).data == pytest.approx(0.75)
    base["prediction"] = Tensor(np.full((), 6.0))
    assert total_loss(base, w).data == pytest.approx(1.5)


def test_empty_batch_is_rejected():
    out, targets, _ = _forward_comps()
    empty = dataclasses.replace(targets, y=np.empty(0))
    with pytest.raises(ValueError, match="empty"):
        loss_components(out, empty, np.float64)


def test_bce_matches_reference_formula():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((8, 1)) * 3
    for label in (0.0, 1.0):
        got = bce_with_logits(Tensor(z), label).data
        p = 1.0 / (1.0 + np.exp(-z))
        want = -np.mean(label * np.log(p) + (1 - label) * np.log(1 - p))
        assert abs(got - want) < 1e-12


def test_bce_saturates_without_overflow():
    big = Tensor(np.full((3, 1), 20.0))
    assert bce_with_logits(big, 1.0).data < 1e-8
    assert bce_with_logits(Tensor(np.full((3, 1), -20.0)), 0.0).data < 1e-8
    # wrong confident answers grow linearly, not to inf
    assert 19 < bce_with_logits(big, 0.0).data < 21
    huge = Tensor(np.full((3, 1), 500.0))
    assert np.isfinite(bce_with_logits(huge, 0.0).data)


def test_bce_gradient_matches_sigmoid_residual():
    z = Tensor(np.array([[0.3], [-1.2]]), requires_grad=True)
    with Tape() as tape:
        loss = bce_with_logits(z, 1.0)
    g = tape.gradients(loss, [z])[0]
    want = (1.0 / (1.0 + np.exp(-z.data)) - 1.0) / z.size
    assert np.abs(g - want).max() < 1e-12


def test_adamw_is_deterministic_bit_for_bit():
    rng = np.random.default_rng(2)
    grads = [rng.standard_normal((4, 3)) for _ in range(10)]

    def run():
        leaf = Tensor(np.ones((4, 3)), requires_grad=True)
        opt = AdamW([leaf], lr=1e-2)
        for g in grads:
            opt.step([g])
        return leaf.data

    assert np.array_equal(run(), run())


def test_adamw_rejects_bad_gradients():
    leaf = Tensor(np.ones(3), requires_grad=True)
    opt = AdamW([leaf])
    with pytest.raises(ValueError):
        opt.step([np.ones(3), np.ones(3)])
    with pytest.raises(NumericError):
        opt.step([np.array([1.0, np.nan, 0.0])])


def test_adamw_state_round_trip_preserves_trajectory():
    rng = np.random.default_rng(3)
    grads = [rng.standard_normal(5) for _ in range(6)]

    leaf_a = Tensor(np.ones(5), requires_grad=True)
    opt_a = AdamW([leaf_a], lr=1e-2)
    for g in grads:
        opt_a.step([g])

    leaf_b = Tensor(np.ones(5), requires_grad=True)
    opt_b = AdamW([leaf_b], lr=1e-2)
    for g in grads[:3]:
        opt_b.step([g])
    saved = opt_b.state_dict()
    leaf_c = Tensor(leaf_b.data.copy(), requires_grad=True)
    opt_c = AdamW([leaf_c], lr=1e-2)
    opt_c.load_state_dict(saved)
    for g in grads[3:]:
        opt_c.step([g])
    assert np.array_equal(leaf_a.data, leaf_c.data)

    with pytest.raises(ValueError):
        opt_a.load_state_dict({"t": 1, "m": [], "v": []})


def _schedule_cfg(**kw):
    return TrainConfig(lr=1e-3, **kw)


def test_lr_schedule_warmup_and_cosine_endpoints():
    cfg = _schedule_cfg()
    total = 200
    warm = max(1, round(0.05 * total))
    assert lr_schedule(0, total, cfg) == 0.0
    assert lr_schedule(warm, total, cfg) == pytest.approx(cfg.lr)
    assert lr_schedule(total - 1, total, cfg) == pytest.approx(0.0, abs=1e-12)
    mid = lr_schedule((warm + total) // 2, total, cfg)
    assert 0 < mid < cfg.lr


def test_lr_schedule_flags():
    flat = _schedule_cfg(warmup=False, cosine=False)
    assert lr_schedule(0, 100, flat) == flat.lr
    assert lr_schedule(99, 100, flat) == flat.lr
    no_warm = _schedule_cfg(warmup=False, cosine=True)
    assert lr_schedule(0, 100, no_warm) == pytest.approx(no_warm.lr)
    assert lr_schedule(0, 1, _schedule_cfg()) == _schedule_cfg().lr


def _tiny_container(seed=5):
    return datasets.generate_synthetic(64, 16, 16, seq_len=6, dim=6,
                                       scheme="mosi", seed=seed)


def _tiny_model_cfg():
    return ModelConfig(tokens=2, width=8, heads=2, ffn_mult=2,
                       dtype="float32")


def test_train_smoke_improves_and_repeats():
    cont = _tiny_container()
    tcfg = TrainConfig(batch_size=16, lr=1e-3, epochs=3, patience=5,
                       seed=7, val_rates=(0.0, 0.5))
    res1 = train(cont, _tiny_model_cfg(), tcfg)
    assert not res1.aborted
    assert len(res1.history) == 3
    assert res1.stopped_epoch == 2
    assert res1.history[-1]["train_loss"] < res1.history[0]["train_loss"]
    assert res1.best_regression is not None
    assert res1.best_regression.metric == min(
        h["val_mae"] for h in res1.history
    )
    assert res1.best_classification.metric == max(
        h["val_acc2"] for h in res1.history
    )
    res2 = train(cont, _tiny_model_cfg(), tcfg)
    assert res2.history[0]["train_loss"] == res1.history[0]["train_loss"]
    assert res2.history[-1]["val_mae"] == res1.history[-1]["val_mae"]


def test_train_rejects_unknown_corruption_mode():
    cont = _tiny_container()
    tcfg = TrainConfig(batch_size=16, epochs=1, train_missing="sometimes")
    with pytest.raises(ValueError, match="train_missing"):
        train(cont, _tiny_model_cfg(), tcfg)


def test_train_aborts_on_nonfinite_loss_scale():
    cont = _tiny_container()
    tcfg = TrainConfig(batch_size=16, lr=1e-3, epochs=2, seed=7,
                       weights=LossWeights(prediction=float("inf")),
                       val_rates=(0.0,))
    res = train(cont, _tiny_model_cfg(), tcfg)
    assert res.aborted
    assert res.best_regression is None
    assert res.history == []


def test_train_mid_run_abort_keeps_last_good_checkpoint():
    cont = _tiny_container()
    tcfg = TrainConfig(batch_size=16, lr=1e-3, epochs=4, seed=7,
                       val_rates=(0.0,))

    def sabotage(record):
        if record["epoch"] == 0:
            object.__setattr__(tcfg, "weights",
                               LossWeights(prediction=float("nan")))

    res = train(cont, _tiny_model_cfg(), tcfg, epoch_callback=sabotage)
    assert res.aborted
    assert res.stopped_epoch == 1
    assert len(res.history) == 1
    assert res.best_regression is not None
    assert res.best_regression.epoch == 0


def test_train_clean_mode_never_corrupts():
    cont = _tiny_container()
    base = TrainConfig(batch_size=16, lr=1e-3, epochs=1, seed=7,
                       train_missing="none", val_rates=(0.0,))
    res = train(cont, _tiny_model_cfg(), base)
    assert not res.aborted
    assert len(res.history) == 1
