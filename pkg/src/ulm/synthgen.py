"""Laboratory-like synthetic records with planted input -> target rules.

Inputs are drawn from truncated log-normal marginals (the white-cell
differential is drawn as one composition so its parts sum to 100 %).  Each
target gets a latent score, a weighted sum of standardised scaled inputs plus
Gaussian noise; the top ``abnormal_rate`` fraction of the latent is abnormal,
and the raw analyte value is placed on the matching side of its threshold.
Missingness is applied afterwards, so a rule may depend on values the record
does not show.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .catalog import AGE, CATALOG, GENDER, THRESHOLDS, FeatureCatalog
from .dataset import LabRecord, Scaler, table_ranges
from .metrics import roc_auc

# median, log-sd of each analyte's raw value
DEFAULT_MARGINALS: dict[str, tuple[float, float]] = {
    "ALT": (20.0, 0.5), "ALB": (42.0, 0.1), "AST": (22.0, 0.4), "CREA": (80.0, 0.25),
    "CRP": (3.0, 1.0), "BC": (3.5, 0.5), "FOL": (10.0, 0.5), "HGB": (135.0, 0.12),
    "BU": (9.0, 0.5), "LDH": (180.0, 0.3), "MCV": (88.0, 0.07), "PLT": (250.0, 0.3),
    "RBC": (4.6, 0.1), "TBIL": (12.0, 0.5), "PRO": (72.0, 0.08), "UREA": (5.0, 0.3),
    "VB": (400.0, 0.5), "WBC": (6.5, 0.3),
}
# white-cell differential composition (before normalising to 100 %)
DIFF_MARGINALS: dict[str, tuple[float, float]] = {
    "NEUT": (58.0, 0.2), "LYMPH": (30.0, 0.3), "MONO": (8.0, 0.3), "EOS": (2.5, 0.6),
    "BASO": (0.6, 0.5),
}
AGE_MEAN, AGE_SD = 45.0, 18.0
RAW_SPREAD = 0.35       # log-spread of raw target values around their threshold
REFERENCE_N = 50_000
REFERENCE_SEED = 20240917
MAX_REPAIR_FRACTION = 0.05
MIN_LAB_TESTS = 3


class SynthConfigError(ValueError):
    pass


@dataclass
class Rule:
    weights: dict[str, float]
    noise: float = 0.5
    abnormal_rate: float = 0.2


def default_rules() -> dict[str, Rule]:
    return {
        "GLU": Rule({"AGE": 1.0, "UREA": 0.6, "CREA": 0.4, "ALT": 0.5, "WBC": 0.4, "GENDER": 0.3},
                    noise=0.5, abnormal_rate=0.10),
        "CHOL": Rule({"AGE": 0.9, "PRO": 0.5, "ALB": 0.4, "AST": 0.4, "GENDER": -0.4, "LDH": 0.3},
                     noise=0.5, abnormal_rate=0.50),
        "FER": Rule({"HGB": -1.0, "MCV": -0.8, "RBC": -0.3, "GENDER": -0.6, "CRP": 0.5},
                    noise=0.5, abnormal_rate=0.12),
        "URIC": Rule({"GENDER": 0.8, "CREA": 0.8, "UREA": 0.5, "AGE": 0.4, "TBIL": 0.3, "PLT": 0.3},
                     noise=0.5, abnormal_rate=0.15),
    }


@dataclass
class SynthConfig:
    n_records: int = 20_000
    missingness: float | dict[str, float] = 0.3
    rules: dict[str, Rule] = field(default_factory=default_rules)
    marginals: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_MARGINALS))
    # >0 makes sicker records (high mean latent) less likely to miss lab tests
    informative_strength: float = 0.0
    seed: int = 0

    def rate(self, code: str) -> float:
        if code in ("AGE", "GENDER"):
            return 0.0
        if isinstance(self.missingness, Mapping):
            return float(self.missingness.get(code, self.missingness.get("default", 0.0)))
        return float(self.missingness)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["marginals"] = {k: list(v) for k, v in self.marginals.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "rules" in d:
            d["rules"] = {k: r if isinstance(r, Rule) else Rule(**r) for k, r in d["rules"].items()}
        if "marginals" in d:
            d["marginals"] = {**DEFAULT_MARGINALS, **{k: tuple(v) for k, v in d["marginals"].items()}}
        return cls(**d)


def missing_informative(config: SynthConfig | None = None, strength: float = 2.0) -> SynthConfig:
    base = config or SynthConfig()
    return SynthConfig(base.n_records, base.missingness, base.rules, base.marginals, strength, base.seed)


# ---------------------------------------------------------------------------


def round_sig(a: np.ndarray, digits: int = 6) -> np.ndarray:
    return np.array([float(f"{v:.{digits}g}") for v in np.ravel(a)]).reshape(np.shape(a))


def _truncated_lognormal(rng, median, sd, lo, hi, n) -> np.ndarray:
    out = rng.lognormal(math.log(median), sd, n)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.lognormal(math.log(median), sd, int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


def _differential(rng, catalog: FeatureCatalog, n: int) -> dict[int, np.ndarray]:
    codes = list(DIFF_MARGINALS)
    parts = np.zeros((n, len(codes)))
    todo = np.arange(n)
    while todo.size:
        raw = np.column_stack([rng.lognormal(math.log(m), s, todo.size)
                               for m, s in DIFF_MARGINALS.values()])
        raw = 100.0 * raw / raw.sum(axis=1, keepdims=True)
        cand = {c: raw[:, j] for j, c in enumerate(codes)}
        cand["GRA"] = cand["NEUT"] + cand["EOS"] + cand["BASO"]
        cand["MID"] = cand["MONO"]
        ok = np.ones(todo.size, dtype=bool)
        for code, col in cand.items():
            f = catalog.by_code(code)
            ok &= (col >= f.min) & (col <= f.max)
        parts[todo[ok]] = raw[ok]
        todo = todo[~ok]
    out = {catalog.id_of(c): parts[:, j] for j, c in enumerate(codes)}
    out[catalog.id_of("GRA")] = parts[:, codes.index("NEUT")] + parts[:, codes.index("EOS")] \
        + parts[:, codes.index("BASO")]
    out[catalog.id_of("MID")] = parts[:, codes.index("MONO")]
    return out


def _sample_inputs(config: SynthConfig, rng, n: int, catalog: FeatureCatalog) -> np.ndarray:
    """Raw input values [n, 32] indexed by feature id, rounded to 6 digits."""
    raw = np.zeros((n, len(catalog) + 1))
    age = rng.normal(AGE_MEAN, AGE_SD, n)
    bad = (age < 18) | (age > 95)
    while bad.any():
        age[bad] = rng.normal(AGE_MEAN, AGE_SD, int(bad.sum()))
        bad = (age < 18) | (age > 95)
    raw[:, AGE] = np.round(age)
    raw[:, GENDER] = (rng.random(n) < 0.5).astype(float)
    for code, (median, sd) in config.marginals.items():
        f = catalog.by_code(code)
        raw[:, f.id] = _truncated_lognormal(rng, median, sd, f.min, f.max, n)
    for fid, col in _differential(rng, catalog, n).items():
        raw[:, fid] = col
    inputs = list(catalog.input_ids)
    raw[:, inputs] = round_sig(raw[:, inputs])
    return raw


def _scaled_inputs(raw: np.ndarray, catalog: FeatureCatalog) -> np.ndarray:
    ids = np.array(catalog.input_ids)
    scaler = Scaler(table_ranges(catalog))
    return scaler.scale_array(np.broadcast_to(ids, (raw.shape[0], ids.size)), raw[:, ids])


class Generator:
    """Holds the calibrated constants of one configuration."""

    def __init__(self, config: SynthConfig, catalog: FeatureCatalog = CATALOG):
        self.config = config
        self.catalog = catalog
        self.targets = catalog.target_codes
        for code in self.targets:
            if code not in config.rules:
                raise SynthConfigError(f"no rule for target {code}")
        self._check_missingness()
        inputs = [catalog[i].code for i in catalog.input_ids]
        self.weights = np.zeros((len(self.targets), len(inputs)))
        for t, code in enumerate(self.targets):
            for name, w in config.rules[code].weights.items():
                if name not in inputs:
                    raise SynthConfigError(f"rule for {code}: {name} is not an input feature")
                self.weights[t, inputs.index(name)] = w
        self.noise = np.array([config.rules[c].noise for c in self.targets])
        self.rates = np.array([config.rules[c].abnormal_rate for c in self.targets])

        ref_rng = np.random.default_rng(REFERENCE_SEED)
        x = _scaled_inputs(_sample_inputs(config, ref_rng, REFERENCE_N, catalog), catalog)
        self.center = x.mean(axis=0)
        spread = x.std(axis=0)
        self.spread = np.where(spread > 0, spread, 1.0)
        z = self.latent(x, ref_rng)
        self.cut = np.quantile(z, 1.0 - self.rates, axis=0).diagonal().copy()
        self.z_sd = z.std(axis=0)

    def _check_missingness(self) -> None:
        cat = self.catalog
        for f in cat:
            r = self.config.rate(f.code)
            if not 0.0 <= r < 1.0:
                raise SynthConfigError(f"missingness for {f.code} must be in [0, 1), got {r}")
        labs = [f.code for f in cat if f.id in cat.input_ids and f.id not in (AGE, GENDER)]
        # P(fewer than MIN_LAB_TESTS labs present), Poisson-binomial
        dist = np.zeros(len(labs) + 1)
        dist[0] = 1.0
        for code in labs:
            p = 1.0 - self.config.rate(code)
            dist[1:] = dist[1:] * (1 - p) + dist[:-1] * p
            dist[0] *= 1 - p
        short = dist[:MIN_LAB_TESTS].sum()
        no_target = math.prod(self.config.rate(c) for c in self.targets)
        if short > MAX_REPAIR_FRACTION or no_target > MAX_REPAIR_FRACTION:
            raise SynthConfigError(
                f"missingness too high: {short:.1%} of records would have < {MIN_LAB_TESTS} "
                f"lab tests and {no_target:.1%} no target")

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) / self.spread

    def rule_score(self, x: np.ndarray) -> np.ndarray:
        """Noise-free latent [n, 4] from scaled inputs [n, 27]."""
        return self.standardize(x) @ self.weights.T

    def latent(self, x: np.ndarray, rng) -> np.ndarray:
        return self.rule_score(x) + rng.normal(size=(x.shape[0], len(self.targets))) * self.noise

    def _target_values(self, z: np.ndarray, gender: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = z.shape[0]
        values = np.zeros((n, len(self.targets)))
        cls = (z >= self.cut).astype(np.int64)
        for t, code in enumerate(self.targets):
            rule, f = THRESHOLDS[code], self.catalog.by_code(code)
            cut = np.where(gender >= 0.5, rule.cut, rule.cut_female) if rule.cut_female else \
                np.full(n, rule.cut)
            sign = 1.0 if rule.above else -1.0
            v = cut * np.exp(sign * RAW_SPREAD * (z[:, t] - self.cut[t]) / self.z_sd[t])
            v = round_sig(np.clip(v, f.min, f.max))
            unit = 10.0 ** (np.floor(np.log10(cut)) - 5)
            got = (v >= cut) if rule.above else (v <= cut)
            wrong = got != cls[:, t].astype(bool)
            # push boundary-rounded values back to the intended side
            step = np.where(cls[:, t] == 1, 1.0, -1.0) * sign
            v[wrong] = round_sig(cut[wrong] + step[wrong] * unit[wrong])
            values[:, t] = v
        return values, cls

    def sample(self, n: int, seed: int) -> dict[str, np.ndarray]:
        """Full arrays: raw values, presence mask, scaled inputs, latent and classes."""
        cat = self.catalog
        rng = np.random.default_rng(seed)
        raw = _sample_inputs(self.config, rng, n, cat)
        x = _scaled_inputs(raw, cat)
        z = self.latent(x, rng)
        tvals, cls = self._target_values(z, raw[:, GENDER])
        tids = list(cat.target_ids)
        raw[:, tids] = tvals

        rates = np.array([self.config.rate(f.code) for f in cat])
        p_miss = np.broadcast_to(rates, (n, len(cat))).copy()
        if self.config.informative_strength:
            health = ((z - self.cut) / self.z_sd).mean(axis=1, keepdims=True)
            labs = np.array([f.id in cat.input_ids and f.id not in (AGE, GENDER) for f in cat])
            r = np.clip(rates, 1e-12, None)
            logit = np.log(r / (1.0 - r))
            shifted = 1.0 / (1.0 + np.exp(-(logit - self.config.informative_strength * health)))
            p_miss[:, labs] = np.where(rates[labs] > 0, shifted[:, labs], 0.0)
        present = np.ones((n, len(cat) + 1), dtype=bool)
        present[:, 0] = False
        present[:, 1:] = rng.random((n, len(cat))) >= p_miss
        self._repair(present, rng)
        return {"raw": raw, "present": present, "x": x, "z": z, "cls": cls}

    def _repair(self, present: np.ndarray, rng) -> None:
        cat = self.catalog
        labs = np.array([i for i in cat.input_ids if i not in (AGE, GENDER)])
        tids = np.array(cat.target_ids)
        for row in np.flatnonzero(present[:, labs].sum(axis=1) < MIN_LAB_TESTS):
            missing = labs[~present[row, labs]]
            need = MIN_LAB_TESTS - int(present[row, labs].sum())
            present[row, rng.choice(missing, need, replace=False)] = True
        for row in np.flatnonzero(~present[:, tids].any(axis=1)):
            present[row, rng.choice(tids)] = True

    def records(self, n: int | None = None, seed: int | None = None) -> list[LabRecord]:
        n = self.config.n_records if n is None else n
        s = self.sample(n, self.config.seed if seed is None else seed)
        raw, present = s["raw"], s["present"]
        order = [f.id for f in self.catalog]
        out = []
        for i in range(n):
            row, keep = raw[i], present[i]
            out.append(LabRecord({fid: float(row[fid]) for fid in order if keep[fid]}, "synthetic"))
        return out

    def reference_auc(self, n: int = 100_000, seed: int | None = None) -> dict[str, float]:
        """Monte-Carlo AUC of the ideal scorer: the latent's conditional mean given
        the observed inputs (unobserved standardised inputs contribute their mean, 0)."""
        if n < 100_000:
            raise ValueError("reference AUC needs n >= 1e5")
        s = self.sample(n, (self.config.seed if seed is None else seed) + 7919)
        cat = self.catalog
        seen = s["present"][:, list(cat.input_ids)]
        score = (self.standardize(s["x"]) * seen) @ self.weights.T
        out = {}
        for t, code in enumerate(self.targets):
            on = s["present"][:, cat.target_ids[t]]
            labels = s["cls"][on, t]
            if labels.min() == labels.max():
                out[code] = float("nan")
            else:
                out[code] = roc_auc(score[on, t], labels).auc
        return out


def generate(config: SynthConfig, catalog: FeatureCatalog = CATALOG) -> list[LabRecord]:
    return Generator(config, catalog).records()


def reference_auc(config: SynthConfig, n_monte_carlo: int = 100_000,
                  catalog: FeatureCatalog = CATALOG) -> dict[str, float]:
    return Generator(config, catalog).reference_auc(n_monte_carlo)
