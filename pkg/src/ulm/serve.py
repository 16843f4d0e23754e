"""JSON-over-HTTP prediction endpoint.

Request (POST, any path, UTF-8 JSON object)::

    {"gender": "F", "age": 55, "results": {"Hemoglobin, (HGB)": 128, "GLU": 5.37}}

``gender`` accepts M/F/1/0.  ``results`` keys are catalog labels or short
codes.  Target analytes may be included; they are echoed back under
``observed`` and never reach the model.

Response (200)::

    {"catalog_hash": "...", "model_version": "...",
     "predictions": {"GLU": {"probability": 0.41, "abnormal": false}, ...},
     "in_domain": {"HGB": true, ...}, "observed": {"GLU": 5.37}, "warnings": []}

Errors carry ``{"error": <machine code>, "detail": <text>}`` and, where it
applies, the offending ``label``: 400 for unparseable bodies, 422 for
well-formed requests the model cannot score (unknown label, non-numeric value,
empty source set, out-of-domain input under the ``reject`` policy).
"""
from __future__ import annotations

import json
import logging
import math
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .catalog import AGE, GENDER
from .dataset import DataError, LabRecord, parse_gender
from .workflow import Predictor

log = logging.getLogger(__name__)

POLICIES = ("reject", "warn")
MAX_BODY = 1 << 20


class RequestError(Exception):
    def __init__(self, status: int, code: str, detail: str, label: str | None = None):
        super().__init__(detail)
        self.status, self.code, self.detail, self.label = status, code, detail, label

    def body(self) -> dict:
        out = {"error": self.code, "detail": self.detail}
        if self.label is not None:
            out["label"] = self.label
        return out


def _number(value, what: str, label: str | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RequestError(422, "non_numeric", f"{what} must be a number, got {value!r}", label)
    v = float(value)
    if not math.isfinite(v):
        raise RequestError(422, "non_finite", f"{what} must be finite", label)
    return v


def parse_request(doc, predictor: Predictor) -> LabRecord:
    catalog = predictor.catalog
    if not isinstance(doc, dict):
        raise RequestError(400, "bad_request", "request body must be a JSON object")
    unknown = set(doc) - {"gender", "age", "results"}
    if unknown:
        raise RequestError(422, "unknown_field", f"unknown fields {sorted(unknown)}")
    values: dict[int, float] = {}
    if doc.get("gender") is not None:
        try:
            values[GENDER] = parse_gender(doc["gender"])
        except DataError as exc:
            raise RequestError(422, "bad_gender", str(exc), "gender") from None
    if doc.get("age") is not None:
        values[AGE] = _number(doc["age"], "age", "age")
    results = doc.get("results", {})
    if not isinstance(results, dict):
        raise RequestError(400, "bad_request", "results must be an object of label -> number")
    for label, value in results.items():
        try:
            f = catalog.by_label(label)
        except KeyError:
            try:
                f = catalog.by_code(label)
            except KeyError:
                raise RequestError(422, "unknown_label", f"unknown test label {label!r}",
                                   label) from None
        if f.id in (AGE, GENDER):
            raise RequestError(422, "misplaced_field",
                               f"{label!r} belongs at the top level, not in results", label)
        if f.id in values:
            raise RequestError(422, "duplicate_label", f"{f.code} given more than once", label)
        values[f.id] = _number(value, f.code, label)
    return LabRecord(values, "request")


def respond(predictor: Predictor, record: LabRecord, policy: str = "reject") -> dict:
    problems = predictor.problems(record)
    if problems == ["empty source set"]:
        raise RequestError(422, "empty_source_set", "no laboratory results besides gender and age")
    if problems and policy == "reject":
        raise RequestError(422, "outside_domain", "; ".join(problems))
    pred = predictor.predict_records([record], clip=bool(problems))[0]
    return {
        "catalog_hash": predictor.catalog_hash,
        "model_version": predictor.model_version,
        "predictions": {code: {"probability": p, "abnormal": a}
                        for code, p, a in zip(predictor.targets, pred.probabilities, pred.abnormal)},
        "in_domain": pred.in_domain,
        "observed": pred.observed,
        "warnings": problems,
    }


def handle(predictor: Predictor, body: bytes, policy: str = "reject") -> tuple[int, dict]:
    """Status code and JSON document for one raw request body."""
    try:
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RequestError(400, "bad_json", f"body is not valid JSON: {exc}") from None
        return 200, respond(predictor, parse_request(doc, predictor), policy)
    except RequestError as exc:
        return exc.status, exc.body()


def make_handler(predictor: Predictor, policy: str):
    class Handler(BaseHTTPRequestHandler):
        server_version = "ulm-serve/1"

        def _send(self, status: int, doc: dict) -> None:
            data = json.dumps(doc, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self._send(400, {"error": "bad_length", "detail": "invalid Content-Length"})
                return
            status, doc = handle(predictor, self.rfile.read(length), policy)
            self._send(status, doc)

        def do_GET(self):
            if self.path.rstrip("/") in ("", "/health"):
                self._send(200, {"status": "ok", "model_version": predictor.model_version,
                                 "catalog_hash": predictor.catalog_hash})
            else:
                self._send(int(HTTPStatus.NOT_FOUND), {"error": "not_found", "detail": self.path})

        def log_message(self, fmt, *args):
            log.info("%s " + fmt, self.address_string(), *args)

    return Handler


def make_server(predictor: Predictor, host: str = "127.0.0.1", port: int = 8000,
                policy: str = "reject") -> ThreadingHTTPServer:
    """Bind the endpoint; raises OSError when the address is unavailable."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    server = ThreadingHTTPServer((host, port), make_handler(predictor, policy))
    server.daemon_threads = True
    return server
