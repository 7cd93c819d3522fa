"""Losses, optimizer, schedule, and the training loop.

Four loss terms: completeness regression (L2 on w), adversarial origin
classification (BCE on both discriminator branches; the gradient-reversal
layer realizes the generator's max inside one minimization), sequence
reconstruction (L2), and sentiment regression (L2). The total is their
weighted sum. Optimization follows AdamW with linear warmup and cosine
annealing, per-sample corruption each epoch, fixed-seed validation
corruption, early stopping on validation MAE, and dual best-checkpoint
tracking (regression-best and classification-best).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import corruption, evalharness
from .config import ModelConfig, TrainConfig
from .diffcore import (
    NumericError,
    Tape,
    Tensor,
    add,
    exp,
    kernels,
    log,
    mean,
    neg,
    relu,
    reshape,
    scale,
    square,
    sub,
)
from .model import LnlnModel

logger = logging.getLogger(__name__)


def bce_with_logits(logits, label):
    """Mean stable binary cross-entropy against a constant 0/1 label.

    Uses relu(z) - z*y + log(1 + exp(-|z|)), which never overflows and
    vanishes for saturated correct logits.
    """
    label = float(label)
    rz = relu(logits)
    abs_z = add(rz, relu(neg(logits)))
    one = Tensor(np.ones((1,) * logits.ndim, dtype=logits.dtype))
    softplus = log(add(exp(scale(abs_z, -1.0)), one))
    return mean(add(sub(rz, scale(logits, label)), softplus))


@dataclass
class BatchTargets:
    """Supervision for one batch: label, completeness, clean sequences."""

    y: np.ndarray
    w_label: np.ndarray
    clean_lang: np.ndarray
    clean_vis: np.ndarray
    clean_aud: np.ndarray


def loss_components(outputs, targets, dtype):
    """The four loss Tensors from one forward pass.

    Returns a dict with keys completeness/adversarial/reconstruction/
    prediction; entries are None when the model variant lacks the
    corresponding head.
    """
    if targets.y.shape[0] == 0:
        raise ValueError("empty batch")
    comps = {"completeness": None, "adversarial": None,
             "reconstruction": None, "prediction": None}

    y_t = Tensor(np.asarray(targets.y, dtype=dtype))
    comps["prediction"] = mean(square(sub(outputs.y_hat, y_t)))

    if outputs.completeness is not None:
        w_flat = reshape(outputs.completeness,
                         (outputs.completeness.shape[0],))
        w_lab = Tensor(np.asarray(targets.w_label, dtype=dtype))
        comps["completeness"] = mean(square(sub(w_flat, w_lab)))

    if outputs.disc_proxy is not None:
        comps["adversarial"] = scale(
            add(bce_with_logits(outputs.disc_proxy, 0.0),
                bce_with_logits(outputs.disc_lang, 1.0)),
            0.5,
        )

    if outputs.recon_lang is not None:
        terms = []
        for rec, clean in (
            (outputs.recon_lang, targets.clean_lang),
            (outputs.recon_vis, targets.clean_vis),
            (outputs.recon_aud, targets.clean_aud),
        ):
            clean_t = Tensor(np.asarray(clean, dtype=dtype))
            terms.append(mean(square(sub(rec, clean_t))))
        comps["reconstruction"] = scale(
            add(add(terms[0], terms[1]), terms[2]), 1.0 / 3.0
        )
    return comps


def total_loss(comps, weights):
    """Weighted sum of the available components (missing/zero-weight
    terms contribute nothing to the graph)."""
    pairs = (
        ("completeness", weights.completeness),
        ("adversarial", weights.adversarial),
        ("reconstruction", weights.reconstruction),
        ("prediction", weights.prediction),
    )
    total = None
    for name, weight in pairs:
        comp = comps.get(name)
        if comp is None or weight == 0.0:
            continue
        term = scale(comp, weight)
        total = term if total is None else add(total, term)
    if total is None:
        total = Tensor(np.zeros(()))
    return total


class AdamW:
    """Decoupled-weight-decay Adam over a fixed list of leaf tensors."""

    def __init__(self, leaves, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.leaves = list(leaves)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(p.size, dtype=p.dtype) for p in self.leaves]
        self.v = [np.zeros(p.size, dtype=p.dtype) for p in self.leaves]

    def step(self, grads, lr=None):
        """Apply one update in place. Raises on non-finite gradients."""
        if len(grads) != len(self.leaves):
            raise ValueError("gradient list does not match parameter list")
        lr = self.lr if lr is None else lr
        for g in grads:
            s = g.sum()
            if not np.isfinite(s) and not np.isfinite(g).all():
                raise NumericError("optimizer_step: non-finite gradient")
        self.t += 1
        for p, g, m, v in zip(self.leaves, grads, self.m, self.v):
            # cast to the leaf dtype so both kernel lanes see identical input
            kernels.adamw_step(
                p.data.ravel(),
                np.ascontiguousarray(g, dtype=p.data.dtype).ravel(),
                m, v, self.t, lr, self.beta1, self.beta2, self.eps,
                self.weight_decay,
            )

    def state_dict(self):
        return {
            "t": self.t,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state):
        if len(state["m"]) != len(self.m):
            raise ValueError("optimizer state does not match parameter list")
        self.t = int(state["t"])
        self.m = [np.array(m, dtype=p.dtype)
                  for m, p in zip(state["m"], self.leaves)]
        self.v = [np.array(v, dtype=p.dtype)
                  for v, p in zip(state["v"], self.leaves)]


def lr_schedule(step, total_steps, cfg: TrainConfig):
    """Learning rate at a 0-based optimizer step.

    Linear warmup from 0 over the first W = 5% of steps (when enabled),
    then cosine decay reaching exactly 0 at the last step.
    """
    base = cfg.lr
    if total_steps <= 1:
        return base
    if cfg.warmup:
        warm = max(1, int(round(cfg.warmup_frac * total_steps)))
    else:
        warm = 0
    if step < warm:
        return base * step / warm
    if not cfg.cosine:
        return base
    final = max(warm + 1, total_steps - 1)
    progress = min(1.0, (step - warm) / (final - warm))
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class Checkpoint:
    """Best-so-far parameter snapshot with its selection metric."""

    state: dict
    epoch: int
    metric: float
    val_metrics: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    model: LnlnModel
    best_regression: Checkpoint | None
    best_classification: Checkpoint | None
    history: list
    stopped_epoch: int
    aborted: bool


def _validate(model, container, cfg, scheme):
    """Rate-averaged validation metrics under fixed corruption seeds."""
    split = container.splits["valid"]
    unknown = container.header.unknown_vector
    maes, accs = [], []
    for rate in cfg.val_rates:
        lang, vis, aud, _ = corruption.corrupt_batch(
            split.lang, split.vis, split.aud, rate,
            (cfg.seed, 777, corruption.rate_key(rate)), unknown,
        )
        preds = model.predict(lang, vis, aud)
        report = evalharness.compute_metrics(preds, split.labels, scheme)
        maes.append(report.mae)
        accs.append(report.acc2_negpos)
    return float(np.mean(maes)), float(np.mean(accs))


def train(container, model_cfg: ModelConfig, cfg: TrainConfig,
          epoch_callback=None):
    """Full training loop; returns the model plus dual best checkpoints.

    Corruption: in "uniform" mode each sample draws a fresh shared-across-
    modalities rate from U[0, max_missing_rate] every epoch; in "grid"
    mode rates come from the discrete tenths {0.0, 0.1, ..} up to
    max_missing_rate, so exactly-clean samples keep real mass during
    training instead of the vanishing probability a continuous draw gives
    them; in "none" mode training data stays clean. Validation uses the
    fixed rate set in the config with epoch-independent corruption seeds,
    so early stopping compares like against like. A non-finite loss aborts
    training and the last good checkpoints are returned (aborted=True).
    """
    header = container.header
    model_cfg = model_cfg.resolved(header.lang_dim, header.vis_dim,
                                   header.aud_dim)
    model = LnlnModel(model_cfg, seed=cfg.seed)
    dtype = model.store.dtype
    leaves = model.leaves()
    opt = AdamW(leaves, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)

    split = container.splits["train"]
    n = split.labels.shape[0]
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    scheme = header.scheme

    best_reg = None
    best_cls = None
    history = []
    aborted = False
    since_best = 0
    step = 0
    stopped_epoch = -1

    for epoch in range(cfg.epochs):
        perm = corruption.keyed_rng(cfg.seed, 303, epoch).permutation(n)
        if cfg.train_missing == "uniform":
            rates = corruption.keyed_rng(cfg.seed, 101, epoch).uniform(
                0.0, cfg.max_missing_rate, size=n
            )
        elif cfg.train_missing == "grid":
            grid = np.round(
                np.arange(0.0, cfg.max_missing_rate + 1e-9, 0.1), 1
            )
            rates = corruption.keyed_rng(cfg.seed, 101, epoch).choice(
                grid, size=n
            )
        elif cfg.train_missing == "none":
            rates = np.zeros(n)
        else:
            raise ValueError(
                "train_missing must be uniform|grid|none, "
                f"got {cfg.train_missing!r}"
            )

        sums = {"total": 0.0, "completeness": 0.0, "adversarial": 0.0,
                "reconstruction": 0.0, "prediction": 0.0}
        last_lr = 0.0
        try:
            for b in range(n_batches):
                idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                lang_c, vis_c, aud_c, w_lab = corruption.corrupt_batch(
                    split.lang[idx], split.vis[idx], split.aud[idx],
                    rates[idx], (cfg.seed, 202, epoch, b),
                    header.unknown_vector,
                )
                targets = BatchTargets(
                    y=split.labels[idx], w_label=w_lab,
                    clean_lang=split.lang[idx], clean_vis=split.vis[idx],
                    clean_aud=split.aud[idx],
                )
                with Tape() as tape:
                    outputs = model.forward(lang_c, vis_c, aud_c)
                    comps = loss_components(outputs, targets, dtype)
                    loss = total_loss(comps, cfg.weights)
                grads = tape.gradients(loss, leaves)
                last_lr = lr_schedule(step, total_steps, cfg)
                opt.step(grads, lr=last_lr)
                step += 1
                sums["total"] += float(loss.data)
                for key in ("completeness", "adversarial",
                            "reconstruction", "prediction"):
                    if comps[key] is not None:
                        sums[key] += float(comps[key].data)
        except NumericError as err:
            logger.error("aborting training at epoch %d: %s", epoch, err)
            aborted = True
            stopped_epoch = epoch
            break

        val_mae, val_acc2 = _validate(model, container, cfg, scheme)
        record = {
            "epoch": epoch,
            "lr": last_lr,
            "train_loss": sums["total"] / n_batches,
            "loss_completeness": sums["completeness"] / n_batches,
            "loss_adversarial": sums["adversarial"] / n_batches,
            "loss_reconstruction": sums["reconstruction"] / n_batches,
            "loss_prediction": sums["prediction"] / n_batches,
            "val_mae": val_mae,
            "val_acc2": val_acc2,
        }
        history.append(record)
        if epoch_callback is not None:
            epoch_callback(record)
        logger.info(
            "epoch %d: loss=%.4f val_mae=%.4f val_acc2=%.4f lr=%.2e",
            epoch, record["train_loss"], val_mae, val_acc2, last_lr,
        )

        if best_reg is None or val_mae < best_reg.metric:
            best_reg = Checkpoint(model.store.state_dict(), epoch, val_mae,
                                  {"val_mae": val_mae, "val_acc2": val_acc2})
            since_best = 0
        else:
            since_best += 1
        if best_cls is None or val_acc2 > best_cls.metric:
            best_cls = Checkpoint(model.store.state_dict(), epoch, val_acc2,
                                  {"val_mae": val_mae, "val_acc2": val_acc2})

        stopped_epoch = epoch
        if cfg.early_stop and since_best >= cfg.patience:
            logger.info("early stop at epoch %d (patience %d)",
                        epoch, cfg.patience)
            break

    if best_reg is not None:
        assert best_reg.metric <= min(h["val_mae"] for h in history), \
            "early-stop bookkeeping returned a worse checkpoint than seen"
    return TrainResult(model, best_reg, best_cls, history, stopped_epoch,
                       aborted)
