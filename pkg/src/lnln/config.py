"""Declarative run configuration: dataclasses, profiles, JSON round trip.

A run is described by a nested ``RunConfig`` (model + training). Configs
load from JSON, accept dotted-path overrides ("train.lr=3e-4"), and reject
unknown keys so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

DEFAULT_SEEDS = (1111, 1112, 1113)
DEFAULT_SWEEP_RATES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the four training loss terms."""

    completeness: float = 0.9
    adversarial: float = 0.8
    reconstruction: float = 0.1
    prediction: float = 1.0

    def as_tuple(self):
        return (
            self.completeness,
            self.adversarial,
            self.reconstruction,
            self.prediction,
        )


# Tuned profiles per annotation scheme.
WEIGHT_PROFILES = {
    "mosi": LossWeights(0.9, 0.8, 0.1, 1.0),
    "mosei": LossWeights(0.9, 0.8, 0.1, 1.0),
    "sims": LossWeights(0.9, 0.6, 0.1, 1.0),
}


def _build_weight_grid():
    """One-factor-at-a-time grid around each tuned profile."""
    grid = {}
    for scheme, alphas, betas, gammas in (
        ("mosi", (0.0, 0.5, 0.9, 1.0), (0.0, 0.5, 0.8, 1.0), (0.0, 0.1, 0.2)),
        ("sims", (0.0, 0.5, 0.9, 1.0), (0.0, 0.3, 0.6, 1.0), (0.0, 0.1, 0.2)),
    ):
        base = WEIGHT_PROFILES[scheme]
        for a in alphas:
            grid[f"{scheme}-completeness-{a}"] = dataclasses.replace(
                base, completeness=a
            )
        for b in betas:
            grid[f"{scheme}-adversarial-{b}"] = dataclasses.replace(
                base, adversarial=b
            )
        for g in gammas:
            grid[f"{scheme}-reconstruction-{g}"] = dataclasses.replace(
                base, reconstruction=g
            )
    return grid


WEIGHT_GRID = _build_weight_grid()


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dims and ablation switches.

    ``*_dim`` default to None and are resolved from the dataset header
    when a model is built for concrete data.
    """

    tokens: int = 8
    width: int = 128
    heads: int = 8
    ffn_mult: int = 4
    lang_dim: int | None = None
    vis_dim: int | None = None
    aud_dim: int | None = None
    fusion_layers: int = 4
    grl_coeff: float = 1.0
    use_dmc: bool = True
    use_reconstructor: bool = True
    dtype: str = "float64"

    def resolved(self, lang_dim, vis_dim, aud_dim):
        """Fill any unset native dims from a dataset's dims."""
        return dataclasses.replace(
            self,
            lang_dim=self.lang_dim or lang_dim,
            vis_dim=self.vis_dim or vis_dim,
            aud_dim=self.aud_dim or aud_dim,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule, corruption policy, and selection rules."""

    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 200
    warmup: bool = True
    warmup_frac: float = 0.05
    cosine: bool = True
    early_stop: bool = True
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 1111
    weights: LossWeights = field(default_factory=LossWeights)
    train_missing: str = "uniform"  # "uniform" U[0, max], "grid" tenths, "none"
    max_missing_rate: float = 0.9
    val_rates: tuple = (0.0, 0.3, 0.6)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def to_dict(cfg):
    """Plain-dict (JSON-ready) form of any config dataclass."""
    return dataclasses.asdict(cfg)


_TUPLE_FIELDS = {"val_rates"}


def _from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ValueError(f"config section {path or cls.__name__!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(
            f"unknown config key(s) {sorted(unknown)} under {path or 'top level'}"
        )
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(f.type) or f.type in (
            "ModelConfig", "TrainConfig", "LossWeights", "RunConfig",
        ):
            sub_cls = {
                "ModelConfig": ModelConfig,
                "TrainConfig": TrainConfig,
                "LossWeights": LossWeights,
                "RunConfig": RunConfig,
            }[f.type if isinstance(f.type, str) else f.type.__name__]
            kwargs[name] = _from_dict(sub_cls, value, sub)
        elif name in _TUPLE_FIELDS:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def run_config_from_dict(data):
    return _from_dict(RunConfig, data)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_dict(json.load(fh))


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(data, overrides):
    """Apply "dotted.path=value" strings onto a config dict, in order.

    Values parse as JSON where possible and fall back to raw strings, so
    ``train.lr=3e-4`` and ``train.train_missing=none`` both work.
    """
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {item!r} descends into a scalar")
        node[parts[-1]] = value
    return data
