"""Set encoder-decoder over (feature, value) pairs, and fixed-width MLP baselines."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .catalog import CATALOG, FeatureCatalog
from .dataset import Batch, DenseBatch, Scaler, make_batch, to_dense
from .embeddings import EmbeddingTable, value_embed_batch

PREDICT_CHUNK = 1024


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


@dataclass
class UlmConfig:
    heads: int = 8
    key_dim: int = 16
    dropout: float = 0.1
    residual: bool = False
    encoder_blocks: int = 1


class UlmModel:
    """Encoder self-attention over the source set, then decoder cross-attention
    queried by the target analytes' label embeddings, then one logistic head
    per target."""

    kind = "ulm"

    def __init__(self, table: EmbeddingTable, config: UlmConfig | None = None,
                 catalog: FeatureCatalog = CATALOG):
        self.table = table
        self.config = config or UlmConfig()
        self.catalog = catalog
        self.dim = table.dim
        self.labels = table.matrix()
        self.queries = self.labels[list(catalog.target_ids)]
        self.n_outputs = len(catalog.target_ids)

    # -- parameters -------------------------------------------------------

    def _attention_shapes(self, prefix: str) -> dict[str, tuple[int, ...]]:
        d, w = self.dim, self.config.heads * self.config.key_dim
        return {
            f"{prefix}.Wq": (d, w), f"{prefix}.bq": (w,),
            f"{prefix}.Wk": (d, w), f"{prefix}.bk": (w,),
            f"{prefix}.Wv": (d, w), f"{prefix}.bv": (w,),
            f"{prefix}.Wo": (w, d), f"{prefix}.bo": (d,),
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {"embed.B": (self.dim,)}
        for i in range(self.config.encoder_blocks):
            shapes.update(self._attention_shapes(f"enc{i}"))
        shapes.update(self._attention_shapes("dec"))
        shapes["head.W"] = (self.n_outputs, self.dim)
        shapes["head.b"] = (self.n_outputs,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for name, shape in self.param_shapes().items():
            leaf = name.rsplit(".", 1)[1]
            if leaf.startswith("W"):
                fan_in = shape[0] if name != "head.W" else shape[1]
                params[name] = _uniform(rng, fan_in, shape)
            else:
                params[name] = np.zeros(shape)
        return params

    # -- forward ----------------------------------------------------------

    def _attention(self, p: Mapping[str, Tensor], prefix: str, query: Tensor, context: Tensor,
                   mask: np.ndarray, train: bool, rng) -> Tensor:
        h, k = self.config.heads, self.config.key_dim

        def split_heads(x: Tensor, W: str, b: str) -> Tensor:
            y = ad.add(ad.matmul(x, p[f"{prefix}.{W}"]), p[f"{prefix}.{b}"])
            n, t = y.shape[0], y.shape[1]
            return ad.transpose(ad.reshape(y, (n, t, h, k)), (0, 2, 1, 3))

        q = split_heads(query, "Wq", "bq")
        kk = split_heads(context, "Wk", "bk")
        v = split_heads(context, "Wv", "bv")
        scores = ad.scale(ad.matmul(q, ad.transpose(kk, (0, 1, 3, 2))), 1.0 / math.sqrt(k))
        weights = ad.softmax_masked(scores, mask[:, None, None, :])
        weights = ad.dropout(weights, self.config.dropout, rng, train)
        out = ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3))
        n, t = out.shape[0], out.shape[1]
        out = ad.reshape(out, (n, t, h * k))
        return ad.add(ad.matmul(out, p[f"{prefix}.Wo"]), p[f"{prefix}.bo"])

    def encode(self, p: Mapping[str, Tensor], batch: Batch, train: bool = False, rng=None) -> Tensor:
        """Contextual set representation [B, S, d]; padded slots are zero rows."""
        mask = batch.source_mask
        x = value_embed_batch(self.labels[batch.feature_ids], batch.values, p["embed.B"])
        keep = Tensor(mask[..., None])
        for i in range(self.config.encoder_blocks):
            h = self._attention(p, f"enc{i}", x, x, mask, train, rng)
            if self.config.residual:
                h = ad.add(h, x)
            x = ad.mul(h, keep)
        return x

    def forward(self, p: Mapping[str, Tensor], batch: Batch, train: bool = False, rng=None) -> Tensor:
        """Abnormality probabilities [B, n_targets]."""
        if not np.all(batch.source_mask.sum(axis=1) > 0):
            raise ValueError("batch row with no source pairs")
        enc = self.encode(p, batch, train, rng)
        n = len(batch)
        q = ad.broadcast(Tensor(self.queries[None]), (n, self.n_outputs, self.dim))
        dec = self._attention(p, "dec", q, enc, batch.source_mask, train, rng)
        if self.config.residual:
            dec = ad.add(dec, q)
        logits = ad.add(ad.reduce_sum(ad.mul(dec, p["head.W"]), axis=-1), p["head.b"])
        return ad.sigmoid(logits)

    # -- data ---------------------------------------------------------------

    def encode_records(self, records, scaler: Scaler) -> Batch:
        return make_batch(records, scaler, self.catalog)

    def from_batch(self, batch: Batch) -> Batch:
        return batch

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, **asdict(self.config)}


class MlpModel:
    """``n_inputs -> hidden (relu) -> k (sigmoid)``; variant B has k=1, M has k=4."""

    def __init__(self, variant: str = "M", target: int | None = None, hidden: int = 256,
                 catalog: FeatureCatalog = CATALOG):
        if variant not in ("B", "M"):
            raise ValueError(f"variant must be 'B' or 'M', got {variant!r}")
        if variant == "B" and target is None:
            raise ValueError("variant B needs a target index")
        self.variant = variant
        self.kind = f"mlp_{variant.lower()}"
        self.target = target
        self.hidden = hidden
        self.catalog = catalog
        self.n_inputs = len(catalog.input_ids)
        self.n_outputs = 1 if variant == "B" else len(catalog.target_ids)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"W1": (self.n_inputs, self.hidden), "b1": (self.hidden,),
                "W2": (self.hidden, self.n_outputs), "b2": (self.n_outputs,)}

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {
            "W1": _uniform(rng, self.n_inputs, (self.n_inputs, self.hidden)),
            "b1": np.zeros(self.hidden),
            "W2": _uniform(rng, self.hidden, (self.hidden, self.n_outputs)),
            "b2": np.zeros(self.n_outputs),
        }

    def forward(self, p: Mapping[str, Tensor], batch: DenseBatch, train: bool = False, rng=None) -> Tensor:
        if batch.x.ndim != 2 or batch.x.shape[1] != self.n_inputs:
            raise ad.ShapeError(f"MLP input must be [B, {self.n_inputs}], got {batch.x.shape}")
        h = ad.relu(ad.add(ad.matmul(Tensor(batch.x), p["W1"]), p["b1"]))
        return ad.sigmoid(ad.add(ad.matmul(h, p["W2"]), p["b2"]))

    def from_batch(self, batch: Batch) -> DenseBatch:
        dense = to_dense(batch, self.catalog)
        if self.variant == "B":
            j = self.target
            keep = dense.target_mask[:, j] > 0
            dense = DenseBatch(dense.x[keep], dense.target_class[keep, j:j + 1],
                               dense.target_mask[keep, j:j + 1])
        return dense

    def encode_records(self, records, scaler: Scaler) -> DenseBatch:
        return self.from_batch(make_batch(records, scaler, self.catalog))

    def describe(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "target": self.target}


class MlpBSet:
    """One independent single-output MLP per target, predicted side by side."""

    kind = "mlp_b"

    def __init__(self, hidden: int = 256, catalog: FeatureCatalog = CATALOG):
        self.catalog = catalog
        self.hidden = hidden
        self.members = [MlpModel("B", j, hidden, catalog) for j in range(len(catalog.target_ids))]
        self.n_outputs = len(self.members)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {f"t{j}.{k}": v for j, m in enumerate(self.members)
                for k, v in m.param_shapes().items()}

    def member_params(self, params: Mapping, j: int) -> dict:
        prefix = f"t{j}."
        return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

    def forward(self, p: Mapping[str, Tensor], batch: DenseBatch, train: bool = False, rng=None) -> Tensor:
        outs = [m.forward(self.member_params(p, j), batch, train, rng)
                for j, m in enumerate(self.members)]
        return ad.concat(outs, axis=1)

    def from_batch(self, batch: Batch) -> DenseBatch:
        return to_dense(batch, self.catalog)

    def encode_records(self, records, scaler: Scaler) -> DenseBatch:
        return self.from_batch(make_batch(records, scaler, self.catalog))

    def describe(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden}


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def predict(model, params: Mapping[str, np.ndarray], batch) -> np.ndarray:
    """Inference-mode probabilities, evaluated in fixed-size chunks."""
    p = as_tensors(params)
    out = []
    for start in range(0, len(batch), PREDICT_CHUNK):
        idx = np.arange(start, min(start + PREDICT_CHUNK, len(batch)))
        out.append(model.forward(p, batch.take(idx), train=False).data)
    if not out:
        return np.zeros((0, model.n_outputs))
    return np.concatenate(out, axis=0)
