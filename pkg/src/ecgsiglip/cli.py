"""Command-line entry point: ``ecgsiglip <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure.
"""
import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import vocab

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

GEN_KEYS = {"n_patients", "records_per_patient", "label_prior", "drift", "seed", "institution", "split_ratios"}


class UsageError(Exception):
    pass


def _read_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return obj


def _require_out(args):
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _manifest(args, cfg_value=None):
    from .data import DatasetManifest

    path = args.manifest or cfg_value
    if not path:
        raise UsageError("no manifest given (use --manifest or the config's 'manifest' key)")
    if not Path(path).is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        return DatasetManifest.read(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _drift(path):
    from .synthgen import DriftParams

    cfg = _read_json(path)
    try:
        return DriftParams(**cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid drift config ({exc})") from exc


def _set_threads(args):
    import torch

    if args.threads is not None:
        torch.set_num_threads(args.threads)
    if args.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def cmd_gen_data(args):
    from .synthgen import generate_corpus

    cfg = _read_json(args.config)
    unknown = sorted(set(cfg) - GEN_KEYS)
    if unknown:
        raise UsageError(f"unknown gen-data keys: {unknown}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg.get("drift") is not None:
        cfg["drift"] = _drift_from_obj(cfg["drift"])
    if "split_ratios" in cfg:
        cfg["split_ratios"] = tuple(cfg["split_ratios"])
    out = _require_out(args)
    try:
        manifest = generate_corpus(out, **cfg)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"invalid gen-data config: {exc}") from exc
    _print_counts(manifest)


def _drift_from_obj(obj):
    from .synthgen import DriftParams

    try:
        return DriftParams(**obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid drift config ({exc})") from exc


def _print_counts(manifest):
    counts = manifest.label_matrix().sum(axis=0)
    print(f"{len(manifest)} records")
    for name, n in zip(vocab.FINDINGS, counts):
        print(f"{int(n):6d}  {name}")


def cmd_split(args):
    from dataclasses import replace

    from .data import DatasetManifest, split_dataset

    cfg = _read_json(args.config)
    manifest = _manifest(args, cfg.get("manifest"))
    ratios = tuple(cfg.get("ratios", (0.8, 0.1, 0.1)))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    try:
        split = split_dataset(manifest, ratios, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.resolve().parent != manifest.root.resolve():
        # relative signal paths would no longer resolve from the new location
        split = DatasetManifest(
            tuple(replace(e, signal_path=str(manifest.resolve(e).resolve())) for e in split.entries), out.parent)
    split.write(out)
    for name in ("train", "val", "test"):
        print(f"{name}: {len(split.split(name))}")


def _train_config(args, **defaults):
    from .training import ConfigError, TrainConfig

    cfg = {**defaults, **_read_json(args.config)}
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.deterministic:
        cfg["deterministic"] = True
        cfg["threads"] = 1
    try:
        return TrainConfig.from_dict(cfg)
    except ConfigError as exc:
        raise UsageError(f"invalid train config: {exc}") from exc


def _train(args, baseline):
    from .training import BASELINE_DEFAULTS, train_baseline_multilabel, train_contrastive

    config = _train_config(args, **(BASELINE_DEFAULTS if baseline else {}))
    manifest = _manifest(args, config.manifest)
    out = _require_out(args)
    fn = train_baseline_multilabel if baseline else train_contrastive

    def show(rec):
        if rec["kind"] == "val":
            print(f"epoch {rec['epoch']:4d}  step {rec['step']:7d}  val f1_micro {rec['f1_micro']:.4f}", flush=True)

    result = fn(manifest, config, out, log=show)
    print(f"best epoch {result.best_epoch}  val f1_micro {result.best_val_f1:.4f}  -> {result.checkpoint}")


def _load_model(args):
    from .checkpoint import CheckpointError, load_model

    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        return load_model(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc


def cmd_eval(args):
    from .evalkit import eval_crop_len, evaluate

    _set_threads(args)
    model, header = _load_model(args)
    manifest = _manifest(args)
    drift = _drift(args.drift_config) if args.drift_config else None
    thresholds = None
    if args.thresholds:
        thresholds = np.asarray(json.loads(Path(args.thresholds).read_text())["thresholds"], dtype=np.float64)
    out = _require_out(args)
    report = evaluate(model, manifest, args.split, out, drift=drift, seed=args.seed or 0,
                      thresholds=thresholds, crop_len=eval_crop_len(header))
    print(f"{args.split}: hamming {report.hamming_loss:.4f}  P {report.precision_micro:.4f}  "
          f"R {report.recall_micro:.4f}  F1 {report.f1_micro:.4f}  jaccard {report.jaccard_index:.4f}")


def cmd_roc(args):
    from .evalkit import compute_report, eval_crop_len, score_records, write_report
    from .data import load_arrays

    _set_threads(args)
    model, header = _load_model(args)
    manifest = _manifest(args)
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"split {args.split!r} is empty")
    signals, truth = load_arrays(manifest, entries)
    scores = score_records(model, signals, crop_len=eval_crop_len(header))
    report = compute_report(scores, truth)
    write_report(report, _require_out(args), scores, [e.record_id for e in entries])
    for row in report.per_label:
        auc = "undefined" if row["auc"] is None else f"{row['auc']:.4f}"
        print(f"{auc:>10}  {row['label']}")


def cmd_export_text_embeddings(args):
    import torch

    from .encoders import write_text_embeddings

    model, _ = _load_model(args)
    if model.kind != "siglip":
        raise UsageError("checkpoint has no text tower")
    texts = [vocab.render_label_prompt(c) for c in range(vocab.N_FINDINGS)]
    if args.manifest:
        texts += sorted({vocab.render_training_text(e.labels) for e in _manifest(args).entries} - set(texts))
    with torch.no_grad():
        vectors = model.encode_texts(texts).double().numpy()
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_text_embeddings(out, texts, vectors)
    print(f"wrote {len(texts)} text embeddings to {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "train": lambda a: _train(a, baseline=False),
    "train-baseline": lambda a: _train(a, baseline=True),
    "eval": cmd_eval,
    "roc": cmd_roc,
    "export-text-embeddings": cmd_export_text_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (or file for split/export)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible mode")
    common.add_argument("--manifest", help="dataset manifest (JSON lines)")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--split", choices=("train", "val", "test"), default="test")

    parser = argparse.ArgumentParser(prog="ecgsiglip", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    sub.add_parser("split", parents=[common], help="patient-disjoint train/val/test split")
    sub.add_parser("train", parents=[common], help="contrastive training")
    sub.add_parser("train-baseline", parents=[common], help="weighted-BCE multi-label baseline")
    ev = sub.add_parser("eval", parents=[common], help="metrics report for one split")
    ev.add_argument("--drift-config", help="JSON drift parameters applied to the split before scoring")
    ev.add_argument("--thresholds", help="JSON file with a 26-entry 'thresholds' list")
    sub.add_parser("roc", parents=[common], help="per-label ROC curves and AUC")
    sub.add_parser("export-text-embeddings", parents=[common], help="write text-tower vectors as JSON lines")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    from .training import NonFiniteLossError

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
