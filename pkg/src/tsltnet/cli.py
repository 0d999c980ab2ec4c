"""Command-line interface: train, evaluate, predict, synth, inspect.

Exit codes are scripting-stable: 0 success, 2 bad flags/usage (argparse), 3
data or bundle problems (with column/row diagnostics), 4 numeric failure
(training divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from .backend import BACKEND_NAME
from .layers import NonFiniteLossError
from .metrics import argmax_labels, confusion, report
from .models import (
    BundleError,
    ModelBundle,
    count_params,
    load_bundle,
    predict_probs,
    save_bundle,
    weight_payload_bytes,
)
from .pipeline import (
    DataError,
    binary_label_state,
    fit_preprocessor,
    encode_feature_row,
    read_csv,
    stratified_indices,
    synth_dataset,
    to_binary_labels,
    transform,
)
from .trainer import TrainConfig, TrainingDivergedError, train


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _evaluate_split(bundle: ModelBundle, fm) -> dict:
    probs = predict_probs(bundle.model, fm.x)
    pred = argmax_labels(probs)
    cm = confusion(fm.y, pred, len(bundle.class_names), bundle.class_names)
    return report(cm)


def cmd_train(args) -> int:
    table, _ = read_csv(args.data, args.label_column)
    train_rows, test_rows = stratified_indices(table.labels,
                                               args.test_fraction, args.seed)
    # statistics come from the training portion only; the test rows are
    # transformed with frozen statistics and never refit
    state = fit_preprocessor(table.subset(train_rows))
    train_fm = transform(state, table.subset(train_rows))
    test_fm = transform(state, table.subset(test_rows))
    if args.task == "binary":
        train_fm = to_binary_labels(train_fm, args.benign_label)
        test_fm = to_binary_labels(test_fm, args.benign_label)
        state = binary_label_state(state, args.benign_label)

    cfg = TrainConfig(
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        learning_rate=args.lr,
        validation_fraction=args.val_fraction,
        seed=args.seed,
    )
    bundle, history = train(args.model, train_fm, cfg, task=args.task,
                            preprocess=state)
    save_bundle(bundle, args.out)

    history_path = args.history_out or args.out + ".history.json"
    _write_json(history_path, history.to_json_list())

    test_report = _evaluate_split(bundle, test_fm)
    report_path = args.report_out or args.out + ".report.json"
    _write_json(report_path, test_report.to_json_dict())

    last = history.records[-1]
    print(f"backend: {BACKEND_NAME}")
    print(f"trained {args.model} for {last.epoch} epochs "
          f"(stop: {history.stop_reason}, best epoch {history.best_epoch})")
    print(f"best val loss {min(r.val_loss for r in history.records):.6f}, "
          f"test accuracy {test_report.accuracy:.5f}")
    print(f"bundle:  {args.out}")
    print(f"history: {history_path}")
    print(f"report:  {report_path}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.preprocess is None:
        raise DataError(f"bundle {args.bundle} carries no preprocessing state")
    table, _ = read_csv(args.data, args.label_column)
    fm = transform(bundle.preprocess, table)
    rep = _evaluate_split(bundle, fm)
    print(rep.to_text())
    if args.out:
        _write_json(args.out, rep.to_json_dict())
        print(f"\nreport written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    state = bundle.preprocess
    if state is None:
        raise DataError(f"bundle {args.bundle} carries no preprocessing state")
    if not os.path.exists(args.data):
        raise DataError(f"data file not found: {args.data}")

    from .numcore import Matrix

    t0 = time.monotonic()
    n_done = 0
    with open(args.data, newline="", encoding="utf-8") as fin, \
            open(args.out, "w", newline="", encoding="utf-8") as fout:
        reader = csv.reader(fin)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{args.data} is empty (no header row)") from None
        missing = [c for c in state.feature_order if c not in header]
        if missing:
            raise DataError(f"columns missing from table: {missing}")
        pos = {name: header.index(name) for name in state.feature_order}

        writer = csv.writer(fout)
        writer.writerow(["index", "predicted_class"]
                        + [f"p_{name}" for name in bundle.class_names])

        def flush(rows: list[list[float]], start_index: int) -> None:
            if not rows:
                return
            x = Matrix.from_rows(rows)
            probs = predict_probs(bundle.model, x)
            pred = argmax_labels(probs)
            for r in range(len(rows)):
                prow = probs.row(r)
                writer.writerow([start_index + r, bundle.class_names[pred[r]]]
                                + [repr(p) for p in prow])

        block: list[list[float]] = []
        block_start = 0
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"row {line_no} has {len(row)} cells, expected {len(header)}"
                )
            cells = {name: row[pos[name]] for name in state.feature_order}
            block.append(encode_feature_row(state, cells))
            if len(block) >= args.block_rows:
                flush(block, block_start)
                block_start += len(block)
                n_done += len(block)
                block = []
        flush(block, block_start)
        n_done += len(block)
    elapsed = time.monotonic() - t0
    rate = n_done / elapsed if elapsed > 0 else float("inf")
    print(f"predicted {n_done} rows in {elapsed:.2f}s ({rate:,.0f} rows/s) "
          f"-> {args.out}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    synth_dataset(args.out, classes=args.classes, features=args.features,
                  rows=args.rows, separation=args.separation,
                  profile=args.imbalance, seed=args.seed)
    print(f"wrote {args.rows} rows x ({args.features} numeric + proto + label) "
          f"-> {args.out}")
    return 0


def cmd_inspect(args) -> int:
    bundle = load_bundle(args.bundle)
    counts = count_params(bundle.model)
    name_w = max(len(r.name) for r in counts.rows) + 2
    kind_w = max(len(r.kind) for r in counts.rows) + 2
    print(f"{'layer':<{name_w}}{'type':<{kind_w}}{'output shape':<16}params")
    for r in counts.rows:
        shape = "(" + ", ".join(str(v) for v in r.output_shape) + ")"
        print(f"{r.name:<{name_w}}{r.kind:<{kind_w}}{shape:<16}{r.params:,}")
    print(f"total trainable parameters: {counts.total:,}")
    for name, (quoted, counted) in counts.reference_deltas.items():
        print(f"note: {name} is quoted as {quoted:,} parameters in the "
              f"reference architecture summary; standard accounting gives "
              f"{counted:,}")
    print(f"architecture: {bundle.arch} | task: {bundle.task} "
          f"| format version: {bundle.version}")
    print(f"input features: {bundle.model.input_dim} "
          f"| classes: {len(bundle.class_names)}")
    print(f"classes: {', '.join(bundle.class_names)}")
    print(f"weight payload: {weight_payload_bytes(bundle):,} bytes "
          f"(32-bit values)")
    print(f"file size: {os.path.getsize(args.bundle):,} bytes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsltnet",
        description="Lightweight temporal-spatial transformer for "
                    "network-flow intrusion detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model and write a bundle")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--label-column", required=True)
    p_train.add_argument("--out", required=True, help="bundle output path")
    p_train.add_argument("--model", choices=["tslt", "mlp"], default="tslt")
    p_train.add_argument("--task", choices=["multiclass", "binary"],
                         default="multiclass")
    p_train.add_argument("--benign-label", default="Benign",
                         help="class collapsed to 0 for the binary task")
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--batch-size", type=int, default=128)
    p_train.add_argument("--patience", type=int, default=5)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--test-fraction", type=float, default=0.2)
    p_train.add_argument("--val-fraction", type=float, default=0.1)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--history-out", default=None)
    p_train.add_argument("--report-out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate",
                            help="score a labeled CSV with a saved bundle")
    p_eval.add_argument("--bundle", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--label-column", required=True)
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.set_defaults(func=cmd_evaluate)

    p_pred = sub.add_parser("predict",
                            help="stream predictions for a CSV (labels optional)")
    p_pred.add_argument("--bundle", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True, help="prediction CSV path")
    p_pred.add_argument("--block-rows", type=int, default=4096)
    p_pred.set_defaults(func=cmd_predict)

    p_synth = sub.add_parser("synth", help="generate a synthetic flow CSV")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--rows", type=int, default=20000)
    p_synth.add_argument("--classes", type=int, default=10)
    p_synth.add_argument("--features", type=int, default=32)
    p_synth.add_argument("--separation", type=float, default=8.0)
    p_synth.add_argument("--imbalance", choices=["uniform", "skewed"],
                         default="uniform")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect",
                               help="print a bundle's layer table and metadata")
    p_inspect.add_argument("--bundle", required=True)
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, BundleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (TrainingDivergedError, NonFiniteLossError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
