"""Record ingestion, applicability domain, scaling, labelling and batching."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import AGE, CATALOG, FIVE_DIFF, GENDER, THREE_DIFF, THRESHOLDS, FeatureCatalog

LOG_EPS = 1e-3
SCALE_LO, SCALE_HI = 0.1, 0.9
DEFAULT_COVERAGE = 0.9999
DEFAULT_BINS = 1000
MIN_AD_SAMPLES = 100


class DataError(ValueError):
    """Bad or inconsistent input data."""


@dataclass
class LabRecord:
    """One laboratory report: feature id -> raw value.

    Gender is stored under its catalog id as 1.0 (M) or 0.0 (F).  Dict
    equality makes two records with the same pairs equal whatever their
    insertion order.
    """

    values: dict[int, float]
    provenance: str = "real"

    def __post_init__(self):
        for fid, v in self.values.items():
            if not math.isfinite(v):
                raise DataError(f"feature {fid}: non-finite value {v!r}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], provenance: str = "real"):
        values: dict[int, float] = {}
        for fid, v in pairs:
            if fid in values:
                raise DataError(f"duplicate feature id {fid}")
            values[fid] = float(v)
        return cls(values, provenance)

    def pairs(self) -> list[tuple[int, float]]:
        return list(self.values.items())

    @property
    def gender(self) -> float | None:
        return self.values.get(GENDER)


@dataclass(frozen=True)
class AdRange:
    feature_id: int
    min: float
    max: float
    coverage: float = DEFAULT_COVERAGE

    def __post_init__(self):
        if self.min > self.max:
            raise DataError(f"feature {self.feature_id}: min {self.min} > max {self.max}")
        if not 0.0 < self.coverage <= 1.0:
            raise DataError(f"coverage must be in (0, 1], got {self.coverage}")

    def contains(self, v: float) -> bool:
        return self.min <= v <= self.max


@dataclass(frozen=True)
class TargetLabel:
    feature_id: int
    cls: int | None
    present: bool


def table_ranges(catalog: FeatureCatalog = CATALOG) -> dict[int, AdRange]:
    """The published acceptable ranges, one per catalog feature."""
    return {f.id: AdRange(f.id, float(f.min), float(f.max)) for f in catalog}


# ---------------------------------------------------------------------------
# applicability domain


def compute_ad_range(values, coverage: float = DEFAULT_COVERAGE,
                     bin_count: int = DEFAULT_BINS, feature_id: int = 0) -> AdRange:
    """Acceptable range covering ``coverage`` of the sample.

    Bins the sample into ``bin_count`` equal-width bins, starts from the
    modal bin and grows the window one bin at a time toward the fuller
    neighbour (the lower side on ties) until the window holds at least
    ``coverage`` of all values.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < MIN_AD_SAMPLES:
        raise DataError(f"need at least {MIN_AD_SAMPLES} values for a range, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value in sample")
    lo_v, hi_v = float(x.min()), float(x.max())
    if lo_v == hi_v:
        return AdRange(feature_id, lo_v, hi_v, coverage)
    counts, edges = np.histogram(x, bins=bin_count, range=(lo_v, hi_v))
    lo, hi = greedy_window(counts, coverage)
    return AdRange(feature_id, float(edges[lo]), float(edges[hi + 1]), coverage)


def greedy_window(counts: Sequence[int], coverage: float) -> tuple[int, int]:
    """Inclusive bin-index window chosen by the greedy traversal."""
    counts = [int(c) for c in counts]
    total = sum(counts)
    if total == 0:
        raise DataError("empty histogram")
    lo = hi = max(range(len(counts)), key=lambda i: (counts[i], -i))
    included = counts[lo]
    while included / total < coverage:
        left = counts[lo - 1] if lo > 0 else None
        right = counts[hi + 1] if hi + 1 < len(counts) else None
        if left is None and right is None:
            break
        if right is None or (left is not None and left >= right):
            lo -= 1
            included += left
        else:
            hi += 1
            included += right
    return lo, hi


def wbc_consistent(record: LabRecord, catalog: FeatureCatalog = CATALOG) -> bool:
    """White-cell differential parts must sum to 100 +/- 4 % when complete."""
    for group in (FIVE_DIFF, THREE_DIFF):
        ids = [catalog.id_of(c) for c in group]
        if all(i in record.values for i in ids):
            return abs(sum(record.values[i] for i in ids) - 100.0) <= 4.0
    return True


def out_of_domain(record: LabRecord, ranges: Mapping[int, AdRange]) -> list[int]:
    """Feature ids whose values fall outside their range."""
    return [fid for fid, v in record.values.items() if not ranges[fid].contains(v)]


def filter_dataset(records: Iterable[LabRecord], ranges: Mapping[int, AdRange],
                   catalog: FeatureCatalog = CATALOG) -> list[LabRecord]:
    targets = set(catalog.target_ids)
    kept = []
    for r in records:
        if out_of_domain(r, ranges):
            continue
        if not wbc_consistent(r, catalog):
            continue
        if not targets.intersection(r.values):
            continue
        kept.append(r)
    return kept


def has_source(record: LabRecord, catalog: FeatureCatalog = CATALOG) -> bool:
    targets = set(catalog.target_ids)
    return any(fid not in targets for fid in record.values)


# ---------------------------------------------------------------------------
# scaling


class Scaler:
    """Log transform then affine map of each feature's range onto [0.1, 0.9].

    Gender bypasses the log: M -> 0.9, F -> 0.1.
    """

    def __init__(self, ranges: Mapping[int, AdRange], eps: float = LOG_EPS):
        self.ranges = dict(ranges)
        self.eps = eps
        size = max(self.ranges) + 1
        self._lo = np.zeros(size)
        self._span = np.ones(size)
        for fid, r in self.ranges.items():
            lo, hi = math.log(r.min + eps), math.log(r.max + eps)
            self._lo[fid] = lo
            self._span[fid] = hi - lo

    def scale(self, fid: int, v: float) -> float:
        r = self.ranges[fid]
        if not r.contains(v):
            raise DataError(f"feature {fid}: value {v} outside [{r.min:g}, {r.max:g}]")
        if fid == GENDER:
            return SCALE_HI if v >= 0.5 else SCALE_LO
        span = self._span[fid]
        if span == 0.0:
            return 0.5 * (SCALE_LO + SCALE_HI)
        u = math.log(v + self.eps)
        return SCALE_LO + (SCALE_HI - SCALE_LO) * (u - self._lo[fid]) / span

    def scale_array(self, ids: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Vectorised ``scale`` for in-range values; id 0 marks padding and maps to 0."""
        ids = np.asarray(ids)
        values = np.asarray(values, dtype=np.float64)
        live = ids > 0
        span = self._span[ids]
        safe_span = np.where(span == 0.0, 1.0, span)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.log(np.where(live, values, 1.0) + self.eps)
        out = SCALE_LO + (SCALE_HI - SCALE_LO) * (u - self._lo[ids]) / safe_span
        out = np.where(span == 0.0, 0.5 * (SCALE_LO + SCALE_HI), out)
        out = np.where(ids == GENDER, np.where(values >= 0.5, SCALE_HI, SCALE_LO), out)
        return np.where(live, out, 0.0)


def scale_value(fid: int, v: float, rng: AdRange) -> float:
    return Scaler({fid: rng}).scale(fid, v)


# ---------------------------------------------------------------------------
# targets, splitting


def label_targets(record: LabRecord, catalog: FeatureCatalog = CATALOG) -> list[TargetLabel]:
    out = []
    for fid in catalog.target_ids:
        code = catalog[fid].code
        if fid not in record.values:
            out.append(TargetLabel(fid, None, False))
            continue
        rule = THRESHOLDS[code]
        if rule.cut_female is not None and record.gender is None:
            raise DataError(f"{code} present without gender")
        cls = int(rule.is_abnormal(record.values[fid], record.gender))
        out.append(TargetLabel(fid, cls, True))
    return out


def split(records: Sequence, ratio: float = 0.8, seed: int = 0):
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_train = int(round(ratio * len(records)))
    return [records[i] for i in order[:n_train]], [records[i] for i in order[n_train:]]


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Padded set encoding; masked slots carry id 0 and value 0."""

    feature_ids: np.ndarray     # int  [B, S]
    values: np.ndarray          # float [B, S], scaled
    source_mask: np.ndarray     # float [B, S]
    target_ids: np.ndarray      # int  [B, 4]
    target_class: np.ndarray    # float [B, 4]
    target_mask: np.ndarray     # float [B, 4]

    def __len__(self) -> int:
        return self.feature_ids.shape[0]

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        mask = self.source_mask[idx]
        width = max(int(mask.sum(axis=1).max()), 1) if len(idx) else 1
        return Batch(self.feature_ids[idx, :width], self.values[idx, :width], mask[:, :width],
                     self.target_ids[idx], self.target_class[idx], self.target_mask[idx])


@dataclass
class DenseBatch:
    """Fixed-width input for the MLP baselines; missing cells are 0.0."""

    x: np.ndarray               # [B, n_inputs]
    target_class: np.ndarray    # [B, k]
    target_mask: np.ndarray     # [B, k]

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "DenseBatch":
        return DenseBatch(self.x[idx], self.target_class[idx], self.target_mask[idx])


def make_batch(records: Sequence[LabRecord], scaler: Scaler,
               catalog: FeatureCatalog = CATALOG) -> Batch:
    """Encode records as a padded batch; source slots keep each record's pair order."""
    if not records:
        raise DataError("empty batch")
    targets = catalog.target_ids
    target_set = set(targets)
    sources = []
    for n, r in enumerate(records):
        src = [(fid, v) for fid, v in r.values.items() if fid not in target_set]
        if not src:
            raise DataError(f"record {n}: empty source set")
        sources.append(src)
    width = max(len(s) for s in sources)
    size = len(records)
    ids = np.zeros((size, width), dtype=np.int64)
    raw = np.zeros((size, width))
    for n, src in enumerate(sources):
        ids[n, :len(src)] = [f for f, _ in src]
        raw[n, :len(src)] = [v for _, v in src]
    for n, src in enumerate(sources):
        for fid, v in src:
            if not scaler.ranges[fid].contains(v):
                raise DataError(f"record {n}: feature {fid} value {v} outside its range")
    values = scaler.scale_array(ids, raw)
    mask = (ids > 0).astype(np.float64)

    cls = np.zeros((size, len(targets)))
    tmask = np.zeros((size, len(targets)))
    for n, r in enumerate(records):
        for j, lab in enumerate(label_targets(r, catalog)):
            if lab.present:
                cls[n, j] = lab.cls
                tmask[n, j] = 1.0
    tids = np.tile(np.asarray(targets, dtype=np.int64), (size, 1))
    return Batch(ids, values, mask, tids, cls, tmask)


def to_dense(batch: Batch, catalog: FeatureCatalog = CATALOG) -> DenseBatch:
    column = {fid: j for j, fid in enumerate(catalog.input_ids)}
    lookup = np.full(max(column) + 1, -1)
    for fid, j in column.items():
        lookup[fid] = j
    x = np.zeros((len(batch), len(column)))
    rows, slots = np.nonzero(batch.source_mask)
    x[rows, lookup[batch.feature_ids[rows, slots]]] = batch.values[rows, slots]
    return DenseBatch(x, batch.target_class.copy(), batch.target_mask.copy())


# ---------------------------------------------------------------------------
# CSV


def _column_names(catalog: FeatureCatalog) -> list[str]:
    names = ["gender", "age"]
    names += [f.label for f in catalog if f.id not in (AGE, GENDER)]
    return names


def resolve_column(name: str, catalog: FeatureCatalog = CATALOG) -> int:
    """Map a column header (label, short code, ``gender``/``age``) to a feature id."""
    key = name.strip()
    if key.lower() == "gender":
        return GENDER
    if key.lower() == "age":
        return AGE
    try:
        return catalog.by_label(key).id
    except KeyError:
        pass
    try:
        return catalog.by_code(key).id
    except KeyError:
        raise DataError(f"unknown feature label {name!r}") from None


def parse_gender(cell) -> float:
    text = str(cell).strip().upper()
    if text in ("M", "1", "1.0"):
        return 1.0
    if text in ("F", "0", "0.0"):
        return 0.0
    raise DataError(f"gender must be M/F/1/0, got {cell!r}")


def parse_cell(fid: int, cell) -> float:
    if fid == GENDER:
        return parse_gender(cell)
    if isinstance(cell, bool):
        raise DataError(f"non-numeric value {cell!r}")
    try:
        v = float(cell)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r}")
    return v


def read_records(path, catalog: FeatureCatalog = CATALOG) -> list[LabRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        columns: list[int | None] = []
        seen = set()
        for name in header:
            if name.strip() == "provenance":
                columns.append(None)
                continue
            fid = resolve_column(name, catalog)
            if fid in seen:
                raise DataError(f"{path}: duplicate column for feature {fid}")
            seen.add(fid)
            columns.append(fid)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            values = {}
            provenance = "real"
            for fid, cell in zip(columns, row):
                if fid is None:
                    provenance = cell.strip() or "real"
                elif cell.strip():
                    try:
                        values[fid] = parse_cell(fid, cell)
                    except DataError as exc:
                        raise DataError(f"{path}:{lineno}: {exc}") from None
            records.append(LabRecord(values, provenance))
    return records


def _open_for_write(dest):
    """``dest`` is a path or an already-open text stream (left open)."""
    if hasattr(dest, "write"):
        return dest, False
    return open(dest, "w", newline="", encoding="utf-8"), True


def write_records(records: Iterable[LabRecord], dest, catalog: FeatureCatalog = CATALOG) -> None:
    names = _column_names(catalog)
    ids = [resolve_column(n, catalog) for n in names]
    fh, owned = _open_for_write(dest)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["provenance"])
        for r in records:
            row = []
            for fid in ids:
                if fid not in r.values:
                    row.append("")
                elif fid == GENDER:
                    row.append("M" if r.values[fid] >= 0.5 else "F")
                else:
                    row.append(repr(float(r.values[fid])))
            w.writerow(row + [r.provenance])
    finally:
        if owned:
            fh.close()


def read_ranges(path, catalog: FeatureCatalog = CATALOG) -> dict[int, AdRange]:
    ranges = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            fid = resolve_column(row["feature"], catalog)
            ranges[fid] = AdRange(fid, float(row["min"]), float(row["max"]),
                                  float(row.get("coverage") or DEFAULT_COVERAGE))
    missing = [catalog[f.id].code for f in catalog if f.id not in ranges]
    if missing:
        raise DataError(f"{path}: no range for {', '.join(missing)}")
    return ranges


def write_ranges(ranges: Mapping[int, AdRange], dest, catalog: FeatureCatalog = CATALOG) -> None:
    fh, owned = _open_for_write(dest)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "min", "max", "coverage"])
        for f in catalog:
            if f.id in ranges:
                r = ranges[f.id]
                w.writerow([f.label, repr(r.min), repr(r.max), repr(r.coverage)])
    finally:
        if owned:
            fh.close()
