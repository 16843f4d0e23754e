"""YAML run configuration: model, embeddings, training, data handling, synthesis.

Every section is optional; unknown keys are rejected so typos fail loudly.
Example::

    seed: 0
    model: {kind: ulm, heads: 8, key_dim: 16, dropout: 0.1}
    embeddings: {dim: 64, seed: 0}            # or {path: labels.tsv}
    train: {lr: 1.0e-4, batch_size: 32, max_epochs: 1000}
    data: {ranges: table, validation_fraction: 0.1}
    synth: {n_records: 20000, missingness: 0.3}
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

import yaml

from .synthgen import SynthConfig
from .trainer import TrainConfig

MODEL_KINDS = ("ulm", "mlp_m", "mlp_b")


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "ulm"
    heads: int = 8
    key_dim: int = 16
    dropout: float = 0.1
    residual: bool = False
    encoder_blocks: int = 1
    hidden: int = 256


@dataclass
class EmbeddingSection:
    path: str | None = None
    dim: int = 64
    seed: int = 0


@dataclass
class DataSection:
    # "table" (published ranges), "data" (computed from the training split) or a CSV path
    ranges: str = "table"
    validation_fraction: float = 0.1
    coverage: float = 0.9999
    bins: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    embeddings: EmbeddingSection = field(default_factory=EmbeddingSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthConfig = field(default_factory=SynthConfig)


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**raw)


def parse_config(raw: Mapping | None) -> RunConfig:
    raw = dict(raw or {})
    unknown = set(raw) - {"seed", "model", "embeddings", "train", "data", "synth"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        seed = int(raw.get("seed", 0))
        model = _section(ModelSection, raw.get("model"), "model")
        if model.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {model.kind!r}")
        train_raw = dict(raw.get("train") or {})
        train_raw.setdefault("seed", seed)
        train_raw.setdefault("lr", 1e-4 if model.kind == "ulm" else 1e-3)
        train = TrainConfig.from_dict(train_raw)
        synth_raw = dict(raw.get("synth") or {})
        synth_raw.setdefault("seed", seed)
        synth = SynthConfig.from_dict(synth_raw)
        return RunConfig(seed, model, _section(EmbeddingSection, raw.get("embeddings"), "embeddings"),
                         train, _section(DataSection, raw.get("data"), "data"), synth)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw)


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Override every seed in ``config`` (the ``--seed`` flag)."""
    return replace(config, seed=seed, train=replace(config.train, seed=seed),
                   synth=replace(config.synth, seed=seed))
