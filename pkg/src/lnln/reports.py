"""Report and manifest emission.

Every run emits machine-readable JSON plus an aligned text table whose
columns carry the usual sentiment-benchmark headers (Acc-7, Acc-5,
Acc-3, Acc-2, F1, MAE, Corr); sweeps also flatten to CSV for plotting.
Acc-2 and F1 cells hold two values, "negpos/negnonneg": the left binary
variant drops exact-zero labels, the right keeps them as non-negative.

Nothing here carries a timestamp. A manifest records the fully resolved
configuration, seeds, and format versions of every artifact involved,
so replaying a manifest reproduces each emitted byte.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from . import __version__
from .checkpoints import CHECKPOINT_VERSION
from .datasets import FORMAT_VERSION as DATASET_FORMAT_VERSION
from .evalharness import METRIC_FIELDS

REPORT_FORMAT_VERSION = 1

# column header -> MetricsReport field(s); dual cells are rendered a/b
_ACC_COLUMNS = {
    "Acc-7": "acc7",
    "Acc-5": "acc5",
    "Acc-3": "acc3",
    "Acc-2": ("acc2_negpos", "acc2_negnonneg"),
    "F1": ("f1_negpos", "f1_negnonneg"),
}
_REG_COLUMNS = {"MAE": "mae", "Corr": "corr"}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def canonical_json(obj):
    """Deterministic JSON text (sorted keys, fixed layout)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(obj))


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def build_manifest(command, config, extra=None):
    """Replay record for one CLI run: resolved config + versions, no clock."""
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "versions": {
            "package": __version__,
            "dataset_format": DATASET_FORMAT_VERSION,
            "checkpoint_format": CHECKPOINT_VERSION,
            "report_format": REPORT_FORMAT_VERSION,
        },
    }
    if extra:
        manifest.update(_jsonable(extra))
    return manifest


# --- table rendering ------------------------------------------------------


def _pct(value):
    return "-" if value is None else f"{100.0 * value:.2f}"


def _dec(value):
    return "-" if value is None else f"{value:.4f}"


def table_columns(scheme):
    """Ordered column headers for a scheme's metric table."""
    acc = (("Acc-7", "Acc-5", "Acc-3") if scheme == "mosi"
           else ("Acc-5", "Acc-3"))
    return acc + ("Acc-2", "F1", "MAE", "Corr")


def render_cells(report, percent=True):
    """Header -> formatted string for one MetricsReport-like object."""
    get = (report.get if isinstance(report, dict)
           else lambda name: getattr(report, name))
    fmt = _pct if percent else _dec
    cells = {}
    for header, field in _ACC_COLUMNS.items():
        if isinstance(field, tuple):
            cells[header] = "/".join(fmt(get(f)) for f in field)
        else:
            cells[header] = fmt(get(field))
    for header, field in _REG_COLUMNS.items():
        cells[header] = _dec(get(field))
    return cells


def aligned_table(headers, rows):
    """Right-aligned plain-text table; rows are lists of strings."""
    widths = [
        max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
        for i, h in enumerate(headers)
    ]
    def line(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def metrics_table(rows, scheme, label_header="Run", percent=True):
    """Aligned table for [(label, MetricsReport-or-dict), ...]."""
    columns = table_columns(scheme)
    body = []
    for label, report in rows:
        cells = render_cells(report, percent=percent)
        body.append([str(label)] + [cells[c] for c in columns])
    return aligned_table([label_header] + list(columns), body)


# --- per-result emitters --------------------------------------------------


def report_to_dict(report):
    d = report.as_dict()
    return d


def sweep_to_dict(result):
    """Machine form of a SweepResult, confusion matrices included."""
    return {
        "scheme": result.scheme,
        "rates": list(result.rates),
        "seeds": list(result.seeds),
        "cells": [
            {
                "seed": c.seed,
                "rate": c.rate,
                "report": c.report.as_dict(),
                "confusion": c.confusion,
            }
            for c in result.cells
        ],
        "per_seed_mean": {
            str(s): r.as_dict() for s, r in result.per_seed_mean.items()
        },
        "per_rate_mean": {
            f"{r:.1f}": m.as_dict() for r, m in result.per_rate_mean.items()
        },
        "overall_mean": result.overall_mean.as_dict(),
        "overall_std": dict(result.overall_std),
    }


def sweep_table(result):
    """Human sweep summary: per-rate means, overall mean, seed stability."""
    rows = [
        (f"r={rate:.1f}", result.per_rate_mean[rate]) for rate in result.rates
    ]
    rows.append(("Avg", result.overall_mean))
    rows.append(("Std", result.overall_std))
    head = (
        f"scheme={result.scheme}  seeds={list(result.seeds)}  "
        f"split-average over {len(result.rates)} rates\n"
        "Std row: per-rate std over seeds, averaged over rates.\n"
    )
    return head + metrics_table(rows, result.scheme, label_header="Rate")


def sweep_csv(result):
    """Flat per-cell curve data (raw fractions, not percentages)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "rate", *METRIC_FIELDS])
    for c in result.cells:
        row = [c.seed, f"{c.rate:.1f}"]
        for name in METRIC_FIELDS:
            v = getattr(c.report, name)
            row.append("" if v is None else repr(v))
        writer.writerow(row)
    return buf.getvalue()


def modality_missing_to_dict(result):
    return {
        "missing": result["missing"],
        "per_seed": {
            str(s): r.as_dict() for s, r in result["per_seed"].items()
        },
        "mean": result["mean"].as_dict(),
    }


def modality_missing_table(results):
    """Aligned table over several modality-missing runs (mean rows)."""
    if not results:
        raise ValueError("no modality-missing results to render")
    scheme = results[0]["mean"].scheme
    rows = []
    for res in results:
        label = "+".join(res["missing"]) if res["missing"] else "none"
        rows.append((f"missing={label}", res["mean"]))
    return metrics_table(rows, scheme, label_header="Mode")
