"""Glue between configs, data, models and checkpoints.

``train_model`` turns records plus a ``RunConfig`` into checkpoint tensors and
metadata.  ``Predictor`` rebuilds a model from a checkpoint and is the single
inference path used by batch prediction, evaluation and the HTTP endpoint.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .catalog import AGE, CATALOG, GENDER, THRESHOLDS, FeatureCatalog
from .checkpoint import CheckpointError, dumps, loads
from .config import RunConfig
from .dataset import (AdRange, DataError, LabRecord, Scaler, compute_ad_range, filter_dataset,
                      make_batch, read_ranges, split, table_ranges, wbc_consistent)
from .embeddings import EmbeddingTable, load_table, pseudo_table
from .model import MlpBSet, MlpModel, UlmConfig, UlmModel, predict
from .trainer import TrainHistory, fit

DECISION_THRESHOLD = 0.5
LABELS_TENSOR = "frozen.labels"


# ---------------------------------------------------------------------------
# building blocks


def data_ranges(records: Sequence[LabRecord], coverage: float, bins: int,
                catalog: FeatureCatalog = CATALOG) -> dict[int, AdRange]:
    """Histogram-traversal ranges for every feature; gender is fixed to [0, 1]."""
    ranges = {}
    for f in catalog:
        if f.id == GENDER:
            ranges[f.id] = AdRange(f.id, 0.0, 1.0, 1.0)
            continue
        vals = [r.values[f.id] for r in records if f.id in r.values]
        try:
            ranges[f.id] = compute_ad_range(vals, coverage, bins, feature_id=f.id)
        except DataError as exc:
            raise DataError(f"{f.code}: {exc}") from None
    return ranges


def resolve_ranges(spec: str, records: Sequence[LabRecord], coverage: float, bins: int,
                   catalog: FeatureCatalog = CATALOG) -> dict[int, AdRange]:
    if spec == "table":
        return table_ranges(catalog)
    if spec == "data":
        return data_ranges(records, coverage, bins, catalog)
    return read_ranges(spec, catalog)


def build_table(cfg: RunConfig, catalog: FeatureCatalog = CATALOG) -> EmbeddingTable:
    e = cfg.embeddings
    if e.path:
        return load_table(e.path, catalog)
    return pseudo_table(catalog, e.dim, e.seed)


def build_model(kind: str, describe: Mapping, table: EmbeddingTable | None,
                catalog: FeatureCatalog = CATALOG):
    if kind == "ulm":
        conf = UlmConfig(**{k: describe[k] for k in asdict(UlmConfig())})
        return UlmModel(table, conf, catalog)
    if kind == "mlp_m":
        return MlpModel("M", hidden=describe["hidden"], catalog=catalog)
    if kind == "mlp_b":
        return MlpBSet(describe["hidden"], catalog)
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_config(cfg: RunConfig, catalog: FeatureCatalog = CATALOG):
    m = cfg.model
    if m.kind == "ulm":
        conf = UlmConfig(m.heads, m.key_dim, m.dropout, m.residual, m.encoder_blocks)
        return UlmModel(build_table(cfg, catalog), conf, catalog)
    return build_model(m.kind, {"hidden": m.hidden}, None, catalog)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: object
    params: dict[str, np.ndarray]
    histories: dict[str, TrainHistory]
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def checkpoint_bytes(self, catalog: FeatureCatalog = CATALOG) -> bytes:
        return dumps(self.tensors, self.meta, catalog)


def _meta(model, cfg: RunConfig, scaler: Scaler, catalog: FeatureCatalog) -> dict:
    ranges = {catalog[fid].code: [r.min, r.max, r.coverage]
              for fid, r in sorted(scaler.ranges.items())}
    meta = {
        "model": model.describe(),
        "targets": list(catalog.target_codes),
        "scaler": {"eps": scaler.eps, "ranges": ranges},
        "thresholds": {c: asdict(THRESHOLDS[c]) for c in catalog.target_codes},
        "decision_threshold": DECISION_THRESHOLD,
        "train": asdict(cfg.train),
    }
    if isinstance(model, UlmModel):
        meta["embeddings"] = {"provenance": model.table.provenance, "dim": model.dim}
    return meta


def train_model(records: Sequence[LabRecord], cfg: RunConfig,
                catalog: FeatureCatalog = CATALOG) -> TrainResult:
    """Fit the configured model on ``records`` (the training split).

    A validation fraction is carved out for early stopping; ranges come from
    the configured source and records outside them are dropped.
    """
    records = list(records)
    if not records:
        raise DataError("no training records")
    fit_part, val_part = split(records, 1.0 - cfg.data.validation_fraction, cfg.seed)
    ranges = resolve_ranges(cfg.data.ranges, fit_part, cfg.data.coverage, cfg.data.bins, catalog)
    fit_part = filter_dataset(fit_part, ranges, catalog)
    val_part = filter_dataset(val_part, ranges, catalog)
    if not fit_part or not val_part:
        raise DataError("no records left after applicability-domain filtering")
    scaler = Scaler(ranges)
    model = model_from_config(cfg, catalog)
    names = catalog.target_codes
    train_batch = make_batch(fit_part, scaler, catalog)
    val_batch = make_batch(val_part, scaler, catalog)

    histories: dict[str, TrainHistory] = {}
    if isinstance(model, MlpBSet):
        params = {}
        for j, member in enumerate(model.members):
            tr, va = member.from_batch(train_batch), member.from_batch(val_batch)
            if len(tr) == 0 or len(va) == 0:
                raise DataError(f"no records with {names[j]} present")
            p, h = fit(member, tr, va, cfg.train, target_names=(names[j],))
            params.update({f"t{j}.{k}": v for k, v in p.items()})
            histories[names[j]] = h
    else:
        params, h = fit(model, model.from_batch(train_batch), model.from_batch(val_batch),
                        cfg.train, target_names=names)
        histories["all"] = h

    tensors = dict(params)
    if isinstance(model, UlmModel):
        tensors[LABELS_TENSOR] = model.labels
    return TrainResult(model, params, histories, _meta(model, cfg, scaler, catalog), tensors)


# ---------------------------------------------------------------------------
# inference


@dataclass
class Prediction:
    probabilities: list[float]
    abnormal: list[bool]
    in_domain: dict[str, bool]
    observed: dict[str, float]


class Predictor:
    """Frozen model plus the scaler, thresholds and AD ranges it was trained with."""

    def __init__(self, blob: bytes, catalog: FeatureCatalog = CATALOG):
        tensors, meta = loads(blob, catalog)
        self.catalog = catalog
        self.meta = meta
        self.model_version = hashlib.sha256(blob).hexdigest()[:16]
        self.catalog_hash = catalog.digest()
        self.threshold = float(meta.get("decision_threshold", DECISION_THRESHOLD))
        try:
            ranges = {catalog.id_of(code): AdRange(catalog.id_of(code), lo, hi, cov)
                      for code, (lo, hi, cov) in meta["scaler"]["ranges"].items()}
            self.scaler = Scaler(ranges, meta["scaler"]["eps"])
            describe = meta["model"]
            table = None
            if describe["kind"] == "ulm":
                table = EmbeddingTable.from_matrix(tensors.pop(LABELS_TENSOR),
                                                   meta["embeddings"]["provenance"])
            self.model = build_model(describe["kind"], describe, table, catalog)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"incomplete checkpoint metadata: {exc}") from None
        expected = self.model.param_shapes()
        if set(expected) != set(tensors):
            raise CheckpointError("checkpoint tensors do not match the model layout")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != tuple(shape):
                raise CheckpointError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.params = tensors
        self.targets = list(catalog.target_codes)

    @classmethod
    def from_file(cls, path, catalog: FeatureCatalog = CATALOG) -> "Predictor":
        with open(path, "rb") as fh:
            return cls(fh.read(), catalog)

    @property
    def ranges(self) -> dict[int, AdRange]:
        return self.scaler.ranges

    def sources(self, record: LabRecord) -> dict[int, float]:
        targets = set(self.catalog.target_ids)
        return {fid: v for fid, v in record.values.items() if fid not in targets}

    def domain_flags(self, record: LabRecord) -> dict[str, bool]:
        return {self.catalog[fid].code: self.ranges[fid].contains(v)
                for fid, v in self.sources(record).items()}

    def problems(self, record: LabRecord) -> list[str]:
        """Reasons the record cannot be scored; empty when it is acceptable."""
        src = self.sources(record)
        if not set(src) - {AGE, GENDER}:
            return ["empty source set"]
        reasons = []
        for fid, v in src.items():
            r = self.ranges[fid]
            if not r.contains(v):
                reasons.append(f"{self.catalog[fid].code} out of applicability domain "
                               f"[{r.min:g}, {r.max:g}]")
        if not wbc_consistent(record, self.catalog):
            reasons.append("WBC differential does not sum to 100 ± 4%")
        return reasons

    def _model_input(self, record: LabRecord, clip: bool) -> LabRecord:
        values = self.sources(record)
        if clip:
            values = {fid: min(max(v, self.ranges[fid].min), self.ranges[fid].max)
                      for fid, v in values.items()}
        return LabRecord(values, record.provenance)

    def probabilities(self, records: Sequence[LabRecord], clip: bool = False) -> np.ndarray:
        """Probabilities [N, 4]; target values are stripped before the forward pass.

        ``clip`` pulls out-of-domain inputs onto the nearest range bound (serve's
        warn policy); otherwise every input must already be in range.
        """
        if not records:
            return np.zeros((0, len(self.targets)))
        inputs = [self._model_input(r, clip) for r in records]
        batch = self.model.from_batch(make_batch(inputs, self.scaler, self.catalog))
        return predict(self.model, self.params, batch)

    def predict_records(self, records: Sequence[LabRecord], clip: bool = False) -> list[Prediction]:
        probs = self.probabilities(records, clip)
        out = []
        for r, row in zip(records, probs):
            observed = {self.catalog[fid].code: r.values[fid]
                        for fid in self.catalog.target_ids if fid in r.values}
            out.append(Prediction([float(p) for p in row],
                                  [bool(p >= self.threshold) for p in row],
                                  self.domain_flags(r), observed))
        return out
