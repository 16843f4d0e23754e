"""Frozen label embeddings and the real-value embedding layer.

A feature's value enters the model as ``label_vector * value + shift``; the
label vector is never rotated or projected.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, mul
from .catalog import CATALOG, FeatureCatalog
from .dataset import DataError


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    entries: dict[int, np.ndarray]
    provenance: str  # "file" or "pseudo"

    def __post_init__(self):
        for fid, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise DataError(f"feature {fid}: vector length {vec.shape} != {self.dim}")
            if not np.any(vec):
                raise DataError(f"feature {fid}: all-zero embedding")

    def __getitem__(self, fid: int) -> np.ndarray:
        try:
            return self.entries[fid]
        except KeyError:
            raise KeyError(f"no embedding for feature id {fid}") from None

    def matrix(self) -> np.ndarray:
        """Rows indexed by feature id; row 0 (padding) is zero."""
        out = np.zeros((max(self.entries) + 1, self.dim))
        for fid, vec in self.entries.items():
            out[fid] = vec
        return out

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, provenance: str) -> "EmbeddingTable":
        entries = {i: matrix[i].copy() for i in range(1, matrix.shape[0]) if np.any(matrix[i])}
        return cls(matrix.shape[1], entries, provenance)


def load_table(path, catalog: FeatureCatalog = CATALOG) -> EmbeddingTable:
    """Read ``label<TAB>f1<TAB>...<TAB>fd`` rows, one per catalog feature."""
    rows: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            label, *cells = line.split("\t")
            try:
                vec = np.array([float(c) for c in cells])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(f"{path}:{lineno}: ragged row ({vec.size} values, expected {dim})")
            rows[label] = vec
    if dim is None or dim == 0:
        raise DataError(f"{path}: no embedding rows")
    absent = [f for f in catalog if f.label not in rows]
    if absent:
        raise DataError("missing embeddings for: " + "; ".join(
            f"{f.label} [{f.code}]" for f in absent))
    return EmbeddingTable(dim, {f.id: rows[f.label] for f in catalog}, "file")


def write_table(table: EmbeddingTable, path, catalog: FeatureCatalog = CATALOG) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in catalog:
            fh.write(f.label + "\t" + "\t".join(repr(float(x)) for x in table[f.id]) + "\n")


def _hashed_unit_vector(label: str, dim: int, seed: int) -> np.ndarray:
    # uniform draws from exact 53-bit integers, unit-normalised with a
    # correctly rounded sum, so the result is identical on any IEEE platform
    raw: list[float] = []
    counter = 0
    while len(raw) < dim:
        h = hashlib.sha256(f"{seed}\x00{label}\x00{counter}".encode("utf-8")).digest()
        for k in range(0, 32, 8):
            bits = int.from_bytes(h[k:k + 8], "little") >> 11
            raw.append(bits / 2.0**52 - 1.0)
        counter += 1
    raw = raw[:dim]
    norm = math.sqrt(math.fsum(x * x for x in raw))
    return np.array([x / norm for x in raw])


def pseudo_table(catalog: FeatureCatalog = CATALOG, dim: int = 64, seed: int = 0) -> EmbeddingTable:
    """Deterministic offline stand-in for text-model label embeddings."""
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    entries = {f.id: _hashed_unit_vector(f.label, dim, seed) for f in catalog}
    return EmbeddingTable(dim, entries, "pseudo")


def value_embed(fid: int, v: float, table: EmbeddingTable, shift: np.ndarray) -> np.ndarray:
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {v!r}")
    return table[fid] * v + shift


def value_embed_batch(label_rows: np.ndarray, values: np.ndarray, shift: Tensor) -> Tensor:
    """Graph version over a padded batch: ``label_rows`` is [B, S, d], ``values`` [B, S]."""
    return add(mul(Tensor(label_rows), Tensor(values[..., None])), shift)
