"""Regenerate the committed fixtures in this directory.

    python3 tests/fixtures/make_fixtures.py

Outputs: synthetic.csv, toy.ckpt (+ history CSV), golden_request.json,
golden_response.json.  Everything is seeded, so rerunning on the same
platform reproduces the files byte for byte.
"""
import json
from pathlib import Path

from ulm.catalog import AGE, CATALOG, GENDER
from ulm.cli import main
from ulm.dataset import read_records
from ulm.serve import handle
from ulm.workflow import Predictor

HERE = Path(__file__).resolve().parent


def golden_request(record) -> dict:
    return {
        "gender": "M" if record.values[GENDER] >= 0.5 else "F",
        "age": record.values[AGE],
        "results": {CATALOG[fid].label: v for fid, v in record.values.items()
                    if fid not in (AGE, GENDER)},
    }


def build() -> None:
    cfg = str(HERE / "toy.yaml")
    data = str(HERE / "synthetic.csv")
    assert main(["synth", "--config", cfg, "--out", data]) == 0
    assert main(["train", "--config", cfg, "--data", data, "--out", str(HERE / "toy.ckpt")]) == 0
    (HERE / "toy.history.png").unlink(missing_ok=True)

    predictor = Predictor.from_file(HERE / "toy.ckpt")
    record = next(r for r in read_records(data) if not predictor.problems(r))
    request = golden_request(record)
    body = json.dumps(request, indent=2, sort_keys=True)
    (HERE / "golden_request.json").write_text(body + "\n", encoding="utf-8")
    status, response = handle(predictor, body.encode("utf-8"))
    assert status == 200, response
    (HERE / "golden_response.json").write_text(
        json.dumps(response, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    build()
