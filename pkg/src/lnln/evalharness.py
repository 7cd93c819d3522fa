"""Evaluation: binning, metrics, the missing-rate sweep, special modes.

Continuous sentiment scores are binned for the accuracy family:

* mosi-like scheme (scores in [-3, 3]): k-class bins by numpy rounding
  (half-to-even, the reference-framework convention) with clamping;
  7-class keeps all integers, 5-class merges the extremes into +/-2,
  3-class into +/-1.
* sims-like scheme (scores in [-1, 1]): threshold bins, right-closed:
  5-class {-0.7, -0.1, 0.1, 0.7}, 3-class {-0.1, 0.1}; 7-class is
  undefined for this scheme.

Two binary variants are always reported: neg/pos excludes exact-zero
labels (prediction side: > 0 is positive), neg/nonneg keeps everything
with >= 0 as non-negative. F1 is support-weighted over the two classes of
the matching variant. Corr is Pearson with the convention that a constant
side yields 0.

The sweep corrupts the test split at each rate in {0, ..., 0.9} (never
1.0) for each seed, reports per-cell metrics plus confusion matrices, and
aggregates: mean over rates per seed, mean over seeds per rate, and the
seed-stability figure (per-rate std over seeds, then mean over rates).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import corruption
from .config import DEFAULT_SEEDS, DEFAULT_SWEEP_RATES

SCHEMES = ("mosi", "sims")
_SIMS_BINS = {5: (-0.7, -0.1, 0.1, 0.7), 3: (-0.1, 0.1)}

MODALITY_CODES = {"l": "lang", "v": "vis", "a": "aud"}

METRIC_FIELDS = (
    "acc7", "acc5", "acc3", "acc2_negpos", "acc2_negnonneg",
    "f1_negpos", "f1_negnonneg", "mae", "corr",
)


@dataclass(frozen=True)
class MetricsReport:
    acc7: float | None
    acc5: float
    acc3: float
    acc2_negpos: float | None
    acc2_negnonneg: float
    f1_negpos: float | None
    f1_negnonneg: float
    mae: float
    corr: float
    count: int
    scheme: str

    def as_dict(self):
        return dataclasses.asdict(self)


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _scheme_range(scheme):
    return (-3.0, 3.0) if scheme == "mosi" else (-1.0, 1.0)


def bin_labels(scores, scheme, granularity):
    """Vectorized class indices for an accuracy granularity.

    Granularity is 7, 5, or 3 (2-class variants are handled inside
    compute_metrics since neg/pos drops samples). Scores outside the
    scheme range are clamped.
    """
    _check_scheme(scheme)
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = _scheme_range(scheme)
    scores = np.clip(scores, lo, hi)
    if scheme == "mosi":
        if granularity not in (7, 5, 3):
            raise ValueError(f"granularity {granularity} undefined for mosi")
        k = (granularity - 1) // 2
        return (np.clip(np.round(scores), -k, k) + k).astype(np.int64)
    if granularity not in _SIMS_BINS:
        raise ValueError(f"granularity {granularity} undefined for sims")
    return np.digitize(scores, _SIMS_BINS[granularity], right=True).astype(np.int64)


def bin_label(score, scheme, granularity):
    """Scalar version of bin_labels."""
    return int(bin_labels(np.asarray([score]), scheme, granularity)[0])


def granularities(scheme):
    """Multiclass granularities defined for a scheme."""
    return (7, 5, 3) if scheme == "mosi" else (5, 3)


def default_confusion_granularity(scheme):
    return 7 if scheme == "mosi" else 5


def weighted_f1(pred_cls, true_cls):
    """Support-weighted F1 (per-class F1 is 0 when precision+recall is 0)."""
    pred_cls = np.asarray(pred_cls)
    true_cls = np.asarray(true_cls)
    n = true_cls.shape[0]
    total = 0.0
    for c in np.unique(true_cls):
        support = int((true_cls == c).sum())
        tp = int(((pred_cls == c) & (true_cls == c)).sum())
        pred_n = int((pred_cls == c).sum())
        precision = tp / pred_n if pred_n else 0.0
        recall = tp / support
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        total += support * f1
    return total / n


def pearson(a, b):
    """Pearson correlation; 0 by convention if either side is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sa = a.std()
    sb = b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def compute_metrics(preds, labels, scheme):
    """Full MetricsReport for prediction/label vectors."""
    _check_scheme(scheme)
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(
            f"preds/labels must be equal-length vectors, got "
            f"{preds.shape} and {labels.shape}"
        )
    if preds.shape[0] == 0:
        raise ValueError("empty input")

    accs = {}
    for g in granularities(scheme):
        accs[g] = float(
            (bin_labels(preds, scheme, g) == bin_labels(labels, scheme, g)).mean()
        )

    nonzero = labels != 0.0
    if nonzero.any():
        p_np = (preds[nonzero] > 0).astype(np.int64)
        t_np = (labels[nonzero] > 0).astype(np.int64)
        acc2_np = float((p_np == t_np).mean())
        f1_np = float(weighted_f1(p_np, t_np))
    else:
        acc2_np = None
        f1_np = None

    p_nn = (preds >= 0).astype(np.int64)
    t_nn = (labels >= 0).astype(np.int64)
    acc2_nn = float((p_nn == t_nn).mean())
    f1_nn = float(weighted_f1(p_nn, t_nn))

    return MetricsReport(
        acc7=accs.get(7),
        acc5=accs[5],
        acc3=accs[3],
        acc2_negpos=acc2_np,
        acc2_negnonneg=acc2_nn,
        f1_negpos=f1_np,
        f1_negnonneg=f1_nn,
        mae=float(np.abs(preds - labels).mean()),
        corr=pearson(preds, labels),
        count=int(preds.shape[0]),
        scheme=scheme,
    )


def confusion_matrix(preds, labels, scheme, granularity=None):
    """Rows = true class, columns = predicted class; entries sum to count."""
    _check_scheme(scheme)
    if granularity is None:
        granularity = default_confusion_granularity(scheme)
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds/labels must be equal-length vectors")
    if preds.shape[0] == 0:
        raise ValueError("empty input")
    p = bin_labels(preds, scheme, granularity)
    t = bin_labels(labels, scheme, granularity)
    k = granularity
    mat = np.zeros((k, k), dtype=np.int64)
    np.add.at(mat, (t, p), 1)
    return mat


def average_reports(reports):
    """Metric-wise arithmetic mean; a metric is None if any input is None."""
    values = {}
    for name in METRIC_FIELDS:
        vals = [getattr(r, name) for r in reports]
        values[name] = (
            None if any(v is None for v in vals) else float(np.mean(vals))
        )
    return MetricsReport(
        count=int(np.sum([r.count for r in reports])),
        scheme=reports[0].scheme,
        **values,
    )


def std_over_reports(reports):
    """Per-metric population std across reports (None-aware)."""
    out = {}
    for name in METRIC_FIELDS:
        vals = [getattr(r, name) for r in reports]
        out[name] = (
            None if any(v is None for v in vals) else float(np.std(vals))
        )
    return out


@dataclass
class SweepCell:
    seed: int
    rate: float
    report: MetricsReport
    confusion: np.ndarray


@dataclass
class SweepResult:
    scheme: str
    rates: tuple
    seeds: tuple
    cells: list
    per_seed_mean: dict    # seed -> rate-averaged MetricsReport
    per_rate_mean: dict    # rate -> seed-averaged MetricsReport
    overall_mean: MetricsReport
    overall_std: dict      # metric -> mean over rates of the per-rate seed std


def _eval_cell(model, split, unknown, rate, seed_key):
    lang, vis, aud, _ = corruption.corrupt_batch(
        split.lang, split.vis, split.aud, rate, seed_key, unknown
    )
    return model.predict(lang, vis, aud), split.labels


def sweep(model, container, rates=DEFAULT_SWEEP_RATES, seeds=DEFAULT_SEEDS,
          split="test"):
    """Full missing-rate sweep; see module docstring for aggregation."""
    rates = tuple(float(r) for r in rates)
    if any(r >= 1.0 for r in rates):
        raise ValueError("sweep rates must be < 1.0")
    seeds = tuple(int(s) for s in seeds)
    scheme = container.header.scheme
    data = container.splits[split]
    unknown = container.header.unknown_vector

    cells = []
    for seed in seeds:
        for rate in rates:
            preds, labels = _eval_cell(
                model, data, unknown, rate,
                (seed, 555, corruption.rate_key(rate)),
            )
            cells.append(SweepCell(
                seed=seed,
                rate=rate,
                report=compute_metrics(preds, labels, scheme),
                confusion=confusion_matrix(preds, labels, scheme),
            ))

    by_seed = {
        s: [c.report for c in cells if c.seed == s] for s in seeds
    }
    per_seed_mean = {s: average_reports(rs) for s, rs in by_seed.items()}
    per_rate_reports = {
        r: [c.report for c in cells if c.rate == r] for r in rates
    }
    per_rate_mean = {
        r: average_reports(rs) for r, rs in per_rate_reports.items()
    }
    overall_mean = average_reports(list(per_seed_mean.values()))
    per_rate_stds = [std_over_reports(per_rate_reports[r]) for r in rates]
    overall_std = {}
    for name in METRIC_FIELDS:
        vals = [s[name] for s in per_rate_stds]
        overall_std[name] = (
            None if any(v is None for v in vals) else float(np.mean(vals))
        )

    return SweepResult(
        scheme=scheme, rates=rates, seeds=seeds, cells=cells,
        per_seed_mean=per_seed_mean, per_rate_mean=per_rate_mean,
        overall_mean=overall_mean, overall_std=overall_std,
    )


def modality_missing_eval(model, container, missing, seeds=DEFAULT_SEEDS,
                          split="test"):
    """Evaluate with whole modalities erased (rate 1.0), others clean.

    ``missing`` is an iterable over {"l", "v", "a"}. The empty set is the
    clean evaluation (consistency anchor); erasing all three is rejected
    as carrying no information. Returns {"per_seed": {seed: report},
    "mean": report, "missing": sorted codes}.
    """
    codes = sorted(set(missing))
    unknown_codes = [c for c in codes if c not in MODALITY_CODES]
    if unknown_codes:
        raise ValueError(
            f"unknown modality code(s) {unknown_codes}; use l, v, a"
        )
    if len(codes) == len(MODALITY_CODES):
        raise ValueError("cannot erase all three modalities: no information left")
    rates = {name: 0.0 for name in corruption.MODALITIES}
    for c in codes:
        rates[MODALITY_CODES[c]] = 1.0

    scheme = container.header.scheme
    data = container.splits[split]
    unknown = container.header.unknown_vector
    mask_code = sum(1 << i for i, c in enumerate("lva") if c in codes)

    per_seed = {}
    for seed in tuple(int(s) for s in seeds):
        lang, vis, aud, _ = corruption.corrupt_batch_per_modality(
            data.lang, data.vis, data.aud, rates, (seed, 556, mask_code),
            unknown,
        )
        preds = model.predict(lang, vis, aud)
        per_seed[seed] = compute_metrics(preds, data.labels, scheme)
    return {
        "missing": codes,
        "per_seed": per_seed,
        "mean": average_reports(list(per_seed.values())),
    }
