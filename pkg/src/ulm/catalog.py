"""The 31-feature laboratory catalog, its default acceptable ranges, and the
abnormality rules for the four predicted analytes."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class Feature:
    id: int
    label: str
    code: str
    units: str
    loinc: str | None
    min: float
    max: float


# id, label, short code, units, LOINC, min, max  (alphabetical by label)
_ROWS = [
    (1, "Age", "AGE", "years", None, 1, 110),
    (2, "Alanine transaminase, (ALT)", "ALT", "U/L", "1742-6", 0.10, 1721.40),
    (3, "Albumin, (ALB)", "ALB", "g/L", "1751-7", 0.04, 60.14),
    (4, "Aspartate aminotransferase, (AST)", "AST", "U/L", "1920-8", 0.30, 1518.50),
    (5, "Basophils, (BASO)", "BASO", "%", "704-7", 0.02, 27.20),
    (6, "Cholesterol, (CHOL)", "CHOL", "mmol/L", "14647-2", 0.02, 17.20),
    (7, "Creatinine, (CREA)", "CREA", "µmol/L", "14682-9", 0.30, 1618.80),
    (8, "C-reactive protein, (CRP)", "CRP", "mg/L", "1988-5", 0.01, 250.95),
    (9, "Direct bilirubin, (BC)", "BC", "µmol/L", "29760-6", 0.04, 238.40),
    (10, "Eosinophils, (EOS)", "EOS", "%", "711-2", 0.09, 43.80),
    (11, "Ferritin, (FER)", "FER", "µg/L", "20567-4", 0.01, 1667.20),
    (12, "Folic acid, (FOL)", "FOL", "ng/mL", "2284-8", 0.56, 330.11),
    (13, "Gender, ({M=1, F=0})", "GENDER", "--", None, 0, 1),
    (14, "Glucose, (GLU)", "GLU", "mmol/L", "14771-0", 0.01, 26.77),
    (15, "Granulocytes, (GRA)", "GRA", "%", "19023-1", 14.7, 94.7),
    (16, "Hemoglobin, (HGB)", "HGB", "g/L", "30350-3", 11.00, 215.00),
    (17, "Indirect bilirubin, (BU)", "BU", "µmol/L", "14630-8", 0.05, 220.79),
    (18, "Lactate dehydrogenase, (LDH)", "LDH", "U/L", "2532-0", 2.00, 4983.00),
    (19, "Lymphocytes, (LYMPH)", "LYMPH", "%", "737-7", 0.10, 90.70),
    (20, "Mean corpuscular volume, (MCV)", "MCV", "fL", "71829-6", 0.70, 134.00),
    (21, "Middle-size Cells, (MID)", "MID", "%", "32155-4", 1.2, 29.4),
    (22, "Monocytes, (MONO)", "MONO", "%", "5905-5", 0.10, 55.40),
    (23, "Neutrophils, (NEUT)", "NEUT", "%", "768-2", 2.90, 100.00),
    (24, "Platelets, (PLT)", "PLT", "10^9/L", "777-3", 1.00, 1053.00),
    (25, "Red blood cells, (RBC)", "RBC", "10^12/L", "789-8", 0.24, 8.21),
    (26, "Total bilirubin, (TBIL)", "TBIL", "µmol/L", "54363-7", 0.03, 432.43),
    (27, "Total protein, (PRO)", "PRO", "g/L", "13980-8", 19.20, 132.10),
    (28, "Urea, (UREA)", "UREA", "mmol/L", "22664-7", 0.50, 67.50),
    (29, "Uric acid, (URIC)", "URIC", "mmol/L", "14933-6", 0.00, 1.22),
    (30, "Vitamin B12, (VB)", "VB", "pg/mL", "2132-9", 1.00, 39833.00),
    (31, "White blood cells, (WBC)", "WBC", "10^9/L", "804-5", 0.10, 68.70),
]

AGE = 1
GENDER = 13

# Predicted analytes, in reporting order.
TARGET_CODES = ("GLU", "CHOL", "FER", "URIC")

FIVE_DIFF = ("BASO", "EOS", "LYMPH", "MONO", "NEUT")
THREE_DIFF = ("MID", "GRA", "LYMPH")


@dataclass(frozen=True)
class Threshold:
    """Abnormal iff value >= cut (``above``) or value <= cut (not ``above``)."""

    above: bool
    cut: float
    cut_female: float | None = None

    def cut_for(self, gender: float | None) -> float:
        if self.cut_female is None:
            return self.cut
        if gender is None:
            raise ValueError("gender-dependent threshold needs gender")
        return self.cut if gender >= 0.5 else self.cut_female

    def is_abnormal(self, value: float, gender: float | None = None) -> bool:
        cut = self.cut_for(gender)
        return value >= cut if self.above else value <= cut


THRESHOLDS = {
    "GLU": Threshold(above=True, cut=7.0),
    "CHOL": Threshold(above=True, cut=5.2),
    "FER": Threshold(above=False, cut=12.0),
    "URIC": Threshold(above=True, cut=0.48, cut_female=0.38),
}


class FeatureCatalog:
    """Ordered feature list with lookups by id, label and short code."""

    def __init__(self, features=None, target_codes=TARGET_CODES):
        self.features: list[Feature] = list(
            features if features is not None else (Feature(*row) for row in _ROWS)
        )
        self._by_id = {f.id: f for f in self.features}
        self._by_label = {f.label: f for f in self.features}
        self._by_code = {f.code: f for f in self.features}
        self.target_ids: tuple[int, ...] = tuple(self._by_code[c].id for c in target_codes)
        self.input_ids: tuple[int, ...] = tuple(
            f.id for f in self.features if f.id not in self.target_ids
        )

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, fid: int) -> Feature:
        return self._by_id[fid]

    def __contains__(self, fid) -> bool:
        return fid in self._by_id

    def by_label(self, label: str) -> Feature:
        return self._by_label[label]

    def by_code(self, code: str) -> Feature:
        return self._by_code[code]

    def id_of(self, code: str) -> int:
        return self._by_code[code].id

    @property
    def target_codes(self) -> tuple[str, ...]:
        return tuple(self[i].code for i in self.target_ids)

    def digest(self) -> str:
        """Stable SHA-256 over ids, labels, units and targets."""
        payload = {
            "features": [[f.id, f.label, f.units, f.loinc] for f in self.features],
            "targets": list(self.target_ids),
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=True).encode()
        return hashlib.sha256(blob).hexdigest()


CATALOG = FeatureCatalog()
