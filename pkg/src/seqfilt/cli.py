"""Command-line surface: train, eval, export-filters, bench.

Every run directory gets a manifest recording the full configuration,
the seed, and a checksum of the input data, so a run can be reproduced
bit-for-bit on the same machine.  Exit codes: 0 success, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, load_corpus, split_loo
from .evaluation import evaluate
from .model import (
    CheckpointError,
    ModelConfig,
    NormalizationError,
    OutOfVocabulary,
    block_key,
    build_tap_matrix,
    count_params,
    freeze_filters,
    load_checkpoint,
    predict_scores_batch,
    save_checkpoint,
)
from .nn import NumericError
from .train import TrainConfig, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _source_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0:
            return rev.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _prepare_out_dir(out, force) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliUsageError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="seqfilt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model on an interaction file")
    tr.add_argument("--data", required=True, help="interaction file (user then items per line)")
    tr.add_argument("--max-len", type=int, default=50)
    tr.add_argument("--dim", type=int, default=64)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--m", type=int, default=8, help="number of basis vectors")
    tr.add_argument("--filter-order", type=int, default=None, help="defaults to max-len")
    tr.add_argument("--alpha", type=float, default=0.0, help="orthogonality penalty weight")
    tr.add_argument("--dropout", type=float, default=0.2)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--batch", type=int, default=256)
    tr.add_argument("--patience", type=int, default=10)
    tr.add_argument("--seed", type=int, default=42)
    tr.add_argument("--mode", choices=("causal", "circular"), default="causal")
    tr.add_argument("--min-interactions", type=int, default=5)
    tr.add_argument("--clip-norm", type=float, default=None)
    tr.add_argument("--out", required=True)
    tr.add_argument("--force", action="store_true")

    ev = sub.add_parser("eval", help="full-ranking evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=("valid", "test"), default="test")
    ev.add_argument("--filter-seen", action="store_true")
    ev.add_argument("--batch", type=int, default=256)
    ev.add_argument("--out", required=True)
    ev.add_argument("--force", action="store_true")

    ex = sub.add_parser("export-filters", help="write per-layer tap magnitudes as CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--force", action="store_true")

    be = sub.add_parser("bench", help="compare frozen vs unfrozen inference time")
    be.add_argument("--checkpoint", required=True)
    be.add_argument("--repeats", type=int, default=5)
    be.add_argument("--batch", type=int, default=256)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--out", required=True)
    be.add_argument("--force", action="store_true")
    return parser


def cmd_train(args) -> int:
    if not 0.0 <= args.dropout < 1.0:
        raise CliUsageError(f"--dropout must be in [0, 1), got {args.dropout}")
    out = _prepare_out_dir(args.out, args.force)
    data_path = Path(args.data)
    if not data_path.exists():
        raise DataError(f"data file {data_path} does not exist")
    corpus = load_corpus(data_path, min_interactions=args.min_interactions)
    model_cfg = ModelConfig(
        num_items=corpus.num_items,
        max_len=args.max_len,
        dim=args.dim,
        layers=args.layers,
        num_bases=args.m,
        filter_order=args.filter_order,
        dropout=args.dropout,
        filter_mode=args.mode,
    )
    train_cfg = TrainConfig(
        lr=args.lr,
        alpha=args.alpha,
        epochs=args.epochs,
        batch_size=args.batch,
        patience=args.patience,
        seed=args.seed,
        clip_norm=args.clip_norm,
    )
    data_sha = _sha256(data_path)
    manifest = {
        "command": "train",
        "flags": {k: v for k, v in vars(args).items() if k != "command"},
        "model_config": model_cfg.to_dict(),
        "train_config": {
            "lr": train_cfg.lr,
            "alpha": train_cfg.alpha,
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
            "patience": train_cfg.patience,
            "seed": train_cfg.seed,
            "clip_norm": train_cfg.clip_norm,
        },
        "loss_averaging": "dense next-item targets over each history prefix",
        "data_sha256": data_sha,
        "source": _source_id(),
        "version": __version__,
        "started": _now(),
    }
    _write_manifest(out / "manifest.json", manifest)
    print(corpus.report.summary())
    params, log = fit(corpus, model_cfg, train_cfg, log_fn=print)
    log.write_csv(out / "trainlog.csv")
    meta = {
        "data_sha256": data_sha,
        "min_interactions": args.min_interactions,
        "seed": args.seed,
        "alpha": args.alpha,
    }
    save_checkpoint(out / "checkpoint.bin", params, model_cfg, meta=meta)
    with open(out / "item_map.json", "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in corpus.item_map.items()}, fh, sort_keys=True)
        fh.write("\n")
    manifest["finished"] = _now()
    manifest["parameters"] = count_params(params)
    manifest["epochs_run"] = len(log.epochs)
    manifest["best_valid_ndcg20"] = max(log.valid_ndcg20)
    _write_manifest(out / "manifest.json", manifest)
    print(f"done: best valid NDCG@20 {max(log.valid_ndcg20):.4f} "
          f"after {len(log.epochs)} epochs -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params, cfg, meta = load_checkpoint(args.checkpoint)
    data_path = Path(args.data)
    if not data_path.exists():
        raise DataError(f"data file {data_path} does not exist")
    if meta.get("data_sha256") and meta["data_sha256"] != _sha256(data_path):
        raise DataError(
            "checkpoint was trained on different data (sha256 mismatch); "
            "pass the original file"
        )
    corpus = load_corpus(data_path, min_interactions=meta.get("min_interactions", 5))
    if corpus.num_items != cfg.num_items:
        raise CheckpointError(
            f"checkpoint expects {cfg.num_items} items, corpus has {corpus.num_items}"
        )
    split = split_loo(corpus)
    report = evaluate(
        split, params, cfg, mode=args.split, batch_size=args.batch, filter_seen=args.filter_seen
    )
    with open(out / f"report_{args.split}.csv", "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    table = report.table()
    with open(out / f"report_{args.split}.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_export_filters(args) -> int:
    out = _prepare_out_dir(args.out, args.force)
    params, cfg, _ = load_checkpoint(args.checkpoint)
    for layer in range(cfg.layers):
        taps, _ = build_tap_matrix(
            params[block_key(layer, "coef")],
            params[block_key(layer, "basis_re")],
            params[block_key(layer, "basis_im")],
        )
        magnitudes = np.abs(taps)
        path = out / f"filters_layer{layer}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            for row in magnitudes:
                fh.write(",".join("%.17g" % v for v in row) + "\n")
        print(f"wrote {path} ({magnitudes.shape[0]} x {magnitudes.shape[1]})")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise CliUsageError(f"--repeats must be >= 1, got {args.repeats}")
    out = _prepare_out_dir(args.out, args.force)
    params, cfg, _ = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    ids = rng.integers(1, cfg.num_items + 1, size=(args.batch, cfg.max_len))
    ops = freeze_filters(params, cfg)

    plain = predict_scores_batch(params, cfg, ids)
    frozen = predict_scores_batch(params, cfg, ids, frozen_ops=ops)
    max_diff = float(np.abs(plain - frozen).max())
    if max_diff > 1e-10:
        raise NumericError(
            f"frozen and unfrozen scores disagree (max abs diff {max_diff:.3e})"
        )

    def time_runs(frozen_ops):
        times = []
        predict_scores_batch(params, cfg, ids, frozen_ops=frozen_ops)  # warm-up
        for _ in range(args.repeats):
            start = time.perf_counter()
            predict_scores_batch(params, cfg, ids, frozen_ops=frozen_ops)
            times.append(time.perf_counter() - start)
        return np.asarray(times)

    unfrozen_times = time_runs(None)
    frozen_times = time_runs(ops)
    speedup = unfrozen_times.mean() / frozen_times.mean()
    with open(out / "bench.csv", "w", encoding="utf-8") as fh:
        fh.write("path,mean_seconds,std_seconds\n")
        fh.write(f"unfrozen,{unfrozen_times.mean():.6g},{unfrozen_times.std():.6g}\n")
        fh.write(f"frozen,{frozen_times.mean():.6g},{frozen_times.std():.6g}\n")
        fh.write(f"speedup,{speedup:.6g},\n")
        fh.write(f"max_abs_diff,{max_diff:.6g},\n")
    print(
        f"unfrozen {unfrozen_times.mean() * 1e3:.2f} ms  "
        f"frozen {frozen_times.mean() * 1e3:.2f} ms  "
        f"speedup {speedup:.2f}x  max|diff| {max_diff:.2e}"
    )
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "export-filters": cmd_export_filters,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OutOfVocabulary, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, NormalizationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
