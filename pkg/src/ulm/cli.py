"""Command-line entry point.

Exit codes: 0 success, 1 bad data / model / environment, 2 usage errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, with_seed
from .dataset import (DataError, filter_dataset, label_targets, read_records,
                      split, write_ranges, write_records)
from .metrics import confusion, roc_auc, write_roc_csv
from .synthgen import SynthConfig, SynthConfigError, generate, missing_informative
from .workflow import Predictor, data_ranges, resolve_ranges, train_model

log = logging.getLogger("ulm")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ulm", description="Set-based laboratory outcome models.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ad-ranges", parents=[common], help="compute applicability-domain ranges")
    p.add_argument("--data", required=True, help="records CSV")
    p.add_argument("--coverage", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)

    p = sub.add_parser("prepare", parents=[common], help="filter records and split train/test")
    p.add_argument("--data", required=True)
    p.add_argument("--ranges", default=None, help="'table', 'data' or a ranges CSV")
    p.add_argument("--ratio", type=float, default=0.8)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic records CSV")
    p.add_argument("--n", type=int, default=None, help="number of records")
    p.add_argument("--missingness", type=float, default=None)
    p.add_argument("--informative", type=float, default=None,
                   help="tie missingness to the latent state with this strength")

    p = sub.add_parser("train", parents=[common], help="train a model from a config")
    p.add_argument("--data", required=True, help="training records CSV")

    p = sub.add_parser("eval", parents=[common], help="metrics on a labelled records CSV")
    p.add_argument("--data", required=True)

    p = sub.add_parser("predict", parents=[common], help="batch predictions for a records CSV")
    p.add_argument("--data", required=True)

    p = sub.add_parser("roc-export", parents=[common], help="ROC curve data and figure per target")
    p.add_argument("--data", required=True)

    p = sub.add_parser("serve", parents=[common], help="run the JSON prediction endpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--policy", choices=("reject", "warn"), default="reject",
                   help="what to do with out-of-domain inputs")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _config(args, required: bool = False) -> RunConfig:
    if args.config is None:
        if required:
            raise UsageError(f"{args.command} requires --config")
        cfg = RunConfig()
    else:
        cfg = load_config(args.config)
    return cfg if args.seed is None else with_seed(cfg, args.seed)


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if value is None:
        raise UsageError(f"{args.command} requires --{name}")
    return value


def _open_out(path: str | None):
    if path is None:
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _labelled(predictor: Predictor, records):
    """Accepted records and their row numbers; skipped rows are logged."""
    kept, rows = [], []
    for n, r in enumerate(records, start=1):
        reasons = predictor.problems(r)
        if reasons:
            print(f"row {n}: skipped: {'; '.join(reasons)}", file=sys.stderr)
            continue
        kept.append(r)
        rows.append(n)
    return kept, rows


def _target_arrays(predictor: Predictor, records, probs):
    """Per-target (scores, labels) over records where the target is present."""
    out = {}
    for j, code in enumerate(predictor.targets):
        scores, labels = [], []
        for r, p in zip(records, probs):
            lab = label_targets(r, predictor.catalog)[j]
            if lab.present:
                scores.append(p[j])
                labels.append(lab.cls)
        out[code] = (scores, labels)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_ad_ranges(args) -> int:
    cfg = _config(args)
    coverage = args.coverage if args.coverage is not None else cfg.data.coverage
    bins = args.bins if args.bins is not None else cfg.data.bins
    ranges = data_ranges(read_records(args.data), coverage, bins)
    write_ranges(ranges, args.out or sys.stdout)
    return EXIT_OK


def cmd_prepare(args) -> int:
    cfg = _config(args)
    out = Path(_need(args, "out"))
    records = read_records(args.data)
    spec = args.ranges or cfg.data.ranges
    ranges = resolve_ranges(spec, records, cfg.data.coverage, cfg.data.bins)
    kept = filter_dataset(records, ranges)
    if not kept:
        print("no records passed applicability-domain filtering", file=sys.stderr)
        return EXIT_DATA
    train, test = split(kept, args.ratio, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_records(train, out / "train.csv")
    write_records(test, out / "test.csv")
    write_ranges(ranges, out / "ranges.csv")
    print(f"kept {len(kept)} of {len(records)} records: {len(train)} train, {len(test)} test")
    return EXIT_OK


def cmd_synth(args) -> int:
    synth = _config(args).synth
    overrides = {}
    if args.n is not None:
        overrides["n_records"] = args.n
    if args.missingness is not None:
        overrides["missingness"] = args.missingness
    if overrides:
        synth = SynthConfig.from_dict({**synth.to_dict(), **overrides})
    if args.informative is not None:
        synth = missing_informative(synth, args.informative)
    write_records(generate(synth), args.out or sys.stdout)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, required=True)
    out = Path(_need(args, "out"))
    records = read_records(args.data)
    result = train_model(records, cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(result.checkpoint_bytes())
    stem = out.with_suffix("")
    for name, h in result.histories.items():
        suffix = "" if name == "all" else f"_{name.lower()}"
        h.to_csv(f"{stem}.history{suffix}.csv")
    from .plotting import history_figure
    history_figure(result.histories, f"{stem}.history.png")
    best = {name: h.best_epoch for name, h in result.histories.items()}
    print(f"saved {out} (best epoch {best})")
    return EXIT_OK


def _predictor(args) -> Predictor:
    return Predictor.from_file(_need(args, "model"))


def cmd_eval(args) -> int:
    predictor = _predictor(args)
    records, _ = _labelled(predictor, read_records(args.data))
    if not records:
        print("no rows accepted", file=sys.stderr)
        return EXIT_DATA
    probs = predictor.probabilities(records)
    rows = []
    for code, (scores, labels) in _target_arrays(predictor, records, probs).items():
        row = {"target": code, "n": len(labels)}
        if labels and 0 < sum(labels) < len(labels):
            rep = confusion(scores, labels, predictor.threshold)
            row.update(auc=roc_auc(scores, labels).auc, accuracy=rep.accuracy,
                       sensitivity=rep.sensitivity, specificity=rep.specificity,
                       tp=rep.tp, tn=rep.tn, fp=rep.fp, fn=rep.fn)
        rows.append(row)
    fields = ["target", "n", "auc", "accuracy", "sensitivity", "specificity", "tp", "tn", "fp", "fn"]
    fh, close = _open_out(args.out)
    try:
        w = csv.DictWriter(fh, fields, restval="", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if close:
            fh.close()
    for row in rows:
        auc = f"{row['auc']:.4f}" if "auc" in row else "undefined (one class)"
        print(f"AUC {row['target']}: {auc}")
    return EXIT_OK


def cmd_predict(args) -> int:
    predictor = _predictor(args)
    records, rows = _labelled(predictor, read_records(args.data))
    if not records:
        print("no rows accepted", file=sys.stderr)
        return EXIT_DATA
    preds = predictor.predict_records(records)
    codes = [c.lower() for c in predictor.targets]
    header = (["row"] + [f"prob_{c}" for c in codes] + [f"abnormal_{c}" for c in codes]
              + [f"observed_{c}" for c in codes])
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, p in zip(rows, preds):
            observed = [repr(p.observed[c]) if c in p.observed else "" for c in predictor.targets]
            w.writerow([n] + [repr(x) for x in p.probabilities]
                       + [int(a) for a in p.abnormal] + observed)
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_roc_export(args) -> int:
    predictor = _predictor(args)
    out = Path(_need(args, "out"))
    records, _ = _labelled(predictor, read_records(args.data))
    if not records:
        print("no rows accepted", file=sys.stderr)
        return EXIT_DATA
    probs = predictor.probabilities(records)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for code, (scores, labels) in _target_arrays(predictor, records, probs).items():
        if not labels or sum(labels) in (0, len(labels)):
            print(f"{code}: skipped, needs both classes", file=sys.stderr)
            continue
        curves[code] = roc_auc(scores, labels)
        write_roc_csv(curves[code], out / f"roc_{code.lower()}.csv")
    if curves:
        from .plotting import roc_figure
        roc_figure(curves, out / "roc.png")
    for code, c in curves.items():
        print(f"AUC {code}: {c.auc:.4f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .serve import make_server
    predictor = _predictor(args)
    try:
        server = make_server(predictor, args.host, args.port, args.policy)
    except OSError as exc:
        print(f"cannot bind {args.host}:{args.port}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    host, port = server.server_address[:2]
    print(f"serving model {predictor.model_version} on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


COMMANDS = {
    "ad-ranges": cmd_ad_ranges, "prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train,
    "eval": cmd_eval, "predict": cmd_predict, "roc-export": cmd_roc_export, "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ulm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ulm {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, SynthConfigError, OSError) as exc:
        print(f"ulm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
