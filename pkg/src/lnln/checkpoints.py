"""Checkpoint persistence: named parameter arrays + config snapshot.

Stored as an npz archive: one entry per parameter leaf (prefix "param/"),
optional optimizer moments (prefixes "opt/m/", "opt/v/"), and a JSON
metadata entry carrying the format version, the model config snapshot,
the parameter name order, and free-form annotations (selection metric,
epoch, ...). Loading into a model whose parameter names/shapes disagree
is rejected.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .config import ModelConfig
from .diffcore import ShapeError
from .model import LnlnModel

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, model, annotations=None, optimizer=None):
    """Write model (and optionally optimizer) state."""
    state = model.store.state_dict()
    arrays = {f"param/{name}": arr for name, arr in state.items()}
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "param_names": list(state),
        "annotations": annotations or {},
        "has_optimizer": optimizer is not None,
    }
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        meta["optimizer_t"] = opt_state["t"]
        for name, m, v in zip(state, opt_state["m"], opt_state["v"]):
            arrays[f"opt/m/{name}"] = m
            arrays[f"opt/v/{name}"] = v
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Read a checkpoint into {meta, params, opt_m, opt_v}."""
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as err:
        raise CheckpointError(f"{path}: unreadable checkpoint: {err}") from None
    if "__meta__" not in data:
        raise CheckpointError(f"{path}: missing metadata entry")
    meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('format_version')}, "
            f"supported {CHECKPOINT_VERSION}"
        )
    params = {}
    for name in meta["param_names"]:
        key = f"param/{name}"
        if key not in data:
            raise CheckpointError(f"{path}: missing parameter entry {name!r}")
        params[name] = data[key]
    out = {"meta": meta, "params": params, "opt_m": None, "opt_v": None}
    if meta.get("has_optimizer"):
        out["opt_m"] = [data[f"opt/m/{n}"] for n in meta["param_names"]]
        out["opt_v"] = [data[f"opt/v/{n}"] for n in meta["param_names"]]
    return out


def model_config_from_checkpoint(ckpt):
    return ModelConfig(**ckpt["meta"]["model_config"])


def restore_model(model, ckpt):
    """Load checkpoint parameters into an existing model (strict)."""
    try:
        model.store.load_state_dict(ckpt["params"])
    except (KeyError, ShapeError) as err:
        raise CheckpointError(f"checkpoint does not fit model: {err}") from None
    return model


def build_model(ckpt):
    """Construct a model from the checkpoint's config and parameters."""
    model = LnlnModel(model_config_from_checkpoint(ckpt), seed=0)
    return restore_model(model, ckpt)


def restore_optimizer(optimizer, ckpt):
    """Load optimizer moments saved alongside the parameters."""
    if not ckpt["meta"].get("has_optimizer"):
        raise CheckpointError("checkpoint carries no optimizer state")
    optimizer.load_state_dict({
        "t": ckpt["meta"]["optimizer_t"],
        "m": ckpt["opt_m"],
        "v": ckpt["opt_v"],
    })
    return optimizer
