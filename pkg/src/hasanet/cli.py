"""``hasanet`` command line: synthesize, labels, train, predict, evaluate, demo, bank.

Exit status is 0 on success, 1 on data or numerical errors and 2 on usage
errors. ``HASA_SEED`` supplies the seed when ``--seed`` is not given.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .demo import DemoSettings, predict_records, run_demo
from .evaluation import build_report, read_predictions, write_predictions
from .hearing import builtin_pattern_bank, load_bank
from .io import atomic_write_text
from .labels import attach_labels, read_labels, surrogate_label_file, write_labels
from .nn import ModelConfig, ModelParams, load_params, save_params
from .synth import (
    CorpusSplit,
    build_test_manifest,
    build_train_manifest,
    read_manifest,
    write_manifest,
)
from .train import Mode, TrainConfig, fit, make_examples, model_config_for, prepare

logger = logging.getLogger("hasanet")

AUDIO_SUFFIXES = (".wav", ".WAV")


class UsageError(Exception):
    pass


def _default_seed() -> int:
    value = os.environ.get("HASA_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"HASA_SEED must be an integer, got {value!r}") from None


def _jobs(args) -> int:
    return args.jobs if args.jobs is not None else (os.cpu_count() or 1)


def _existing_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} is not a directory: {path}")
    return p


def _audio_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix in AUDIO_SUFFIXES)


def _bank(args):
    return load_bank(args.bank) if getattr(args, "bank", None) else builtin_pattern_bank()


# -- subcommands ----------------------------------------------------------------------


def cmd_synthesize(args) -> int:
    clean_dir = _existing_dir(args.clean_dir, "--clean-dir")
    noise_dir = _existing_dir(args.noise_dir, "--noise-dir")
    seed = args.seed if args.seed is not None else _default_seed()
    clean, noise = _audio_files(clean_dir), _audio_files(noise_dir)
    bank = _bank(args)
    if args.split == "train":
        manifest = build_train_manifest(clean, noise, bank, seed)
    else:
        manifest = build_test_manifest(clean, noise, bank, seed, strict=not args.any_size)
    write_manifest(args.out, manifest)
    counts = {s.value: len(manifest.split(s)) for s in CorpusSplit}
    logger.info("wrote %d records to %s %s", len(manifest), args.out, counts)
    return 0


def cmd_labels(args) -> int:
    manifest_path = _existing_file(args.manifest, "--manifest")
    labels_path = _existing_file(args.labels, "--labels") if args.action == "attach" else None
    manifest = read_manifest(manifest_path)
    bank = _bank(args)
    if args.action == "surrogate":
        labels = surrogate_label_file(manifest, bank, jobs=_jobs(args))
        write_labels(args.out, labels)
        logger.info("wrote %d surrogate labels to %s", len(labels.rows), args.out)
    else:
        labels = read_labels(labels_path)
        write_manifest(args.out, attach_labels(manifest, labels))
        logger.info("attached %d labels; wrote %s", len(labels.rows), args.out)
    return 0


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(_existing_file(path, "--config").read_text())


MODEL_KEYS = ("hidden", "dense", "heads")


def cmd_train(args) -> int:
    manifest_path = _existing_file(args.manifest, "--manifest")
    options = _load_config_file(args.config)
    for key in ("learning_rate", "batch_size", "max_epochs", "patience", "mode", "alpha", "beta", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    options.setdefault("seed", _default_seed())
    model_opts = {k: options.pop(k) for k in MODEL_KEYS if k in options}
    try:
        config = TrainConfig.from_dict(options)
        model_config = model_config_for(config.mode, ModelConfig(**model_opts))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    out_dir = Path(args.out_dir)
    manifest = read_manifest(manifest_path)
    bank = _bank(args)
    data = prepare(manifest, bank, config.log_compress, jobs=_jobs(args))
    logger.info("training on %d utterances, validating on %d", len(data.train), len(data.val))
    params = ModelParams.init(model_config, config.seed)
    result = fit(data, params, config)
    effective = {"train": config.to_dict(), "model": model_config.to_dict(), "manifest_digest": manifest.digest}
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.json", json.dumps(effective, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "history.jsonl", result.history_jsonl())
    save_params(out_dir / "params.hprm", result.best_params)
    logger.info("best epoch %d of %d; wrote %s", result.best_epoch, len(result.history), out_dir)
    return 0


def cmd_predict(args) -> int:
    manifest_path = _existing_file(args.manifest, "--manifest")
    params_path = _existing_file(args.params, "--params")
    manifest, params = read_manifest(manifest_path), load_params(params_path)
    splits = [CorpusSplit(s) for s in args.splits.split(",")] if args.splits else list(CorpusSplit)
    records = manifest.split(*splits)
    if not records:
        raise ValueError(f"no records in splits {[s.value for s in splits]}")
    examples = make_examples(records, _bank(args), jobs=_jobs(args))
    preds = predict_records(examples, params)
    provenance = json.dumps({"model": params.config.to_dict(), "manifest_digest": manifest.digest}, sort_keys=True)
    write_predictions(args.out, preds, provenance)
    logger.info("wrote %d predictions to %s", len(preds), args.out)
    return 0


def cmd_evaluate(args) -> int:
    manifest_path = _existing_file(args.manifest, "--manifest")
    predictions_path = _existing_file(args.predictions, "--predictions")
    manifest, predictions = read_manifest(manifest_path), read_predictions(predictions_path)
    report = build_report(predictions, manifest, _bank(args))
    report.meta = {"manifest_digest": manifest.digest, "predictions": Path(args.predictions).name}
    report.write(args.out)
    print(report.to_text())
    return 0


def cmd_demo(args) -> int:
    settings = DemoSettings(
        seed=args.seed if args.seed is not None else _default_seed(),
        n_train_clean=args.n_train,
        n_test_clean=args.n_test,
        epochs=args.epochs,
        ablation=not args.no_ablation,
        jobs=_jobs(args),
    )
    paths = run_demo(args.out_dir, settings)
    print(Path(paths["multitask_report"]).read_text())
    if "ablation" in paths:
        print(Path(paths["ablation"]).read_text())
    return 0


def cmd_bank(args) -> int:
    bank = _bank(args)
    if not args.quiet:
        sys.stdout.write(bank.to_text())
    problems = bank.validate(full=not args.partial)
    for p in problems:
        logger.error("%s", p)
    if problems:
        return 1
    logger.info("bank OK: %d patterns", len(bank))
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hasanet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet-log", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=True, bank=True):
        if jobs:
            p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all CPUs)")
        if bank:
            p.add_argument("--bank", help="pattern bank file (default: built-in 42-pattern bank)")

    p = sub.add_parser("synthesize", help="build a seeded corpus manifest")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--any-size", action="store_true", help="test split: allow other than 100 clean x 4 noises")
    common(p, jobs=False)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("labels", help="attach label files or compute surrogate labels")
    p.add_argument("action", choices=("attach", "surrogate"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="label file to attach")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("train", help="train a model on the TRAIN/VAL records of a labelled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON file of training and model options")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score manifest records with a trained model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", help="comma-separated splits (default: all)")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="MSE/LCC/SRCC report per hearing-loss configuration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="output directory")
    common(p, jobs=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("demo", help="run the whole pipeline on generated audio")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=DemoSettings.epochs)
    p.add_argument("--n-train", type=int, default=DemoSettings.n_train_clean)
    p.add_argument("--n-test", type=int, default=DemoSettings.n_test_clean)
    p.add_argument("--no-ablation", action="store_true", help="skip the single-task models")
    common(p, bank=False)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("bank", help="print and validate the hearing-loss pattern bank")
    p.add_argument("--quiet", action="store_true", help="validate only")
    p.add_argument("--partial", action="store_true", help="skip the 42 = 6 x (5 + 2) layout check")
    common(p, jobs=False)
    p.set_defaults(func=cmd_bank)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet_log else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hasanet: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, ArithmeticError, KeyError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
