"""Versioned, platform-independent checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"ULMCKPT\\0"
    8       2     format version (uint16), currently 1
    10      4     header length H (uint32)
    14      H     header: UTF-8 JSON, keys sorted, no whitespace
    14+H    N     tensor payload: float64 little-endian, C order, concatenated
    14+H+N  32    SHA-256 of every preceding byte

The header holds ``catalog_hash``, ``meta`` (free-form JSON: model kind and
shape, embedding provenance, scaler ranges, thresholds, training config) and
``tensors``, a list of ``{"name", "shape", "offset"}`` with offsets relative to
the payload start.  Tensors are stored sorted by name, so saving the same
parameters twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import Mapping

import numpy as np

from .catalog import CATALOG, FeatureCatalog

MAGIC = b"ULMCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping, catalog: FeatureCatalog = CATALOG) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"catalog_hash": catalog.digest(), "meta": meta, "tensors": index},
                        sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                        allow_nan=False).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes, catalog: FeatureCatalog | None = CATALOG) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size + 32:
        raise CheckpointError("file too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    magic, version, hlen = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch (file corrupted or edited)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if catalog is not None and header["catalog_hash"] != catalog.digest():
        raise CheckpointError(
            f"catalog hash mismatch: checkpoint {header['catalog_hash'][:12]}..., "
            f"runtime {catalog.digest()[:12]}...")
    payload = memoryview(body)[start + hlen:]
    tensors = {}
    for item in header["tensors"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=item["offset"])
        tensors[item["name"]] = arr.astype(np.float64).reshape(tuple(item["shape"]))
    return tensors, header["meta"]


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping,
                    catalog: FeatureCatalog = CATALOG) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, meta, catalog))


def load_checkpoint(path, catalog: FeatureCatalog | None = CATALOG):
    with open(path, "rb") as fh:
        return loads(fh.read(), catalog)
