"""Command line: ``lidnet {extract,train,eval,predict}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Any config key can be overridden on the command line as ``--section.key VALUE``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from lidnet.config import ConfigError, RunConfig, load_config
from lidnet.data import (
    DataError,
    aggregate_report,
    build_confusion,
    class_metrics,
    load_manifest,
    render_confusion_text,
    write_confusion_csv,
    write_manifest,
    write_metrics_csv,
)
from lidnet.features import (
    DecodeError,
    FeatureConfigError,
    FeatureFormatError,
    TooShortError,
    compute_mfsc,
    load_features,
    read_wav,
    write_lidf,
)
from lidnet.model import LidModel, softmax_probs
from lidnet.tensor import DimensionError
from lidnet.training import (
    Checkpoint,
    CheckpointFormatError,
    CheckpointShapeError,
    NumericError,
    TrainConfig,
    Utterance,
    evaluate_model,
    load_checkpoint,
    restore,
    save_checkpoint,
    train_loop,
    write_history_csv,
)

log = logging.getLogger("lidnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_ERRORS = (DataError, DecodeError, FeatureFormatError, FeatureConfigError, TooShortError,
               CheckpointFormatError, CheckpointShapeError, DimensionError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="shortcut for --train.seed")
    p.add_argument("--workers", type=int, help="parallel feature loaders (shortcut for --train.workers)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="lidnet", description="Spoken language identification: features, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="WAV manifest -> LIDF feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", parents=[common], help="train and write the best checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="metrics and confusion reports for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("predict", parents=[common], help="classify one WAV or LIDF file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("path")
    return parser


def _split_overrides(extra: Sequence[str]) -> dict:
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{tok} needs a value")
            i += 1
            value = extra[i]
        out[key] = value
        i += 1
    return out


def resolve_config(args, extra: Sequence[str]) -> RunConfig:
    overrides = _split_overrides(extra)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    if args.workers is not None:
        overrides["train.workers"] = str(args.workers)
    return load_config(args.config, overrides)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr_init=cfg["train.lr"], lr_min=cfg["train.lr_min"], total_steps=cfg["train.total_steps"],
                       batch_size=cfg["train.batch_size"], max_epochs=cfg["train.max_epochs"],
                       plateau_patience=cfg["train.patience"], plateau_min_delta=cfg["train.min_delta"],
                       seed=cfg["train.seed"], crop_frames=cfg["train.crop_frames"],
                       bucket_by_length=cfg["train.bucket_by_length"])


def build_model(cfg: RunConfig) -> LidModel:
    return LidModel.init(cfg.encoder(), cfg["model.attention_dim"], len(cfg.labels()),
                         np.random.default_rng(cfg["train.seed"]))


def load_utterances(manifest: str, cfg: RunConfig) -> list:
    labels, fcfg = cfg.labels(), cfg.features()
    entries = load_manifest(manifest, labels)

    def one(e):
        return Utterance(load_features(e.path, fcfg).frames, labels.index(e.label), f"{manifest}:{e.line}")

    return _map(one, entries, cfg["train.workers"])


def _map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _load_model(cfg: RunConfig, checkpoint: str) -> LidModel:
    model = build_model(cfg)
    restore(model, load_checkpoint(checkpoint).params)
    return model


# ---------------------------------------------------------------------------
# commands

def cmd_extract(args, cfg: RunConfig) -> int:
    fcfg, labels = cfg.features(), cfg.labels()
    entries = load_manifest(args.manifest, labels)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(item):
        i, e = item
        name = f"{i:06d}_{Path(e.path).stem}.lidf"
        try:
            write_lidf(out / name, compute_mfsc(read_wav(e.path, fcfg.sample_rate), fcfg).frames)
        except DATA_ERRORS as exc:
            log.error("extraction failed for %s: %s", e.path, exc)
            return None
        return name, e.label

    results = _map(one, list(enumerate(entries)), cfg["train.workers"])
    ok = [r for r in results if r is not None]
    failed = len(results) - len(ok)
    write_manifest(out / "manifest.tsv", ok)
    cfg.save(out / "config.resolved")
    print(f"extracted {len(ok)} of {len(entries)} files into {out}")
    return EXIT_DATA if failed else EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    if not cfg["data.train_manifest"] or not cfg["data.val_manifest"]:
        raise ConfigError("data.train_manifest and data.val_manifest must be set")
    tcfg = train_config(cfg)
    train = load_utterances(cfg["data.train_manifest"], cfg)
    val = load_utterances(cfg["data.val_manifest"], cfg)
    model = build_model(cfg)
    result = train_loop(model, train, val, tcfg, cfg.augment())

    ckpt_path = Path(args.out)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    stem = ckpt_path.with_suffix("")
    config_kv = dict(line.split("=", 1) for line in cfg.dumps().splitlines())
    save_checkpoint(ckpt_path, Checkpoint(result.best_state, result.steps, config_kv,
                                          result.rng_state, result.best_val_loss))
    write_history_csv(f"{stem}.history.csv", result.history)
    cfg.save(f"{stem}.config")
    if not args.no_figures:
        from lidnet.plotting import plot_history

        plot_history(result.history, f"{stem}.history.png")
    acc = evaluate_model(model, train, tcfg.batch_size).accuracy
    print(f"steps={result.steps} epochs={result.epochs} best_val_loss={result.best_val_loss:.4f} "
          f"train_accuracy={acc:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    labels = cfg.labels()
    data = load_utterances(args.manifest, cfg)
    model = _load_model(cfg, args.checkpoint)
    res = evaluate_model(model, data, cfg["train.batch_size"])
    matrix = build_confusion(((labels.codes[t], labels.codes[p]) for t, p in zip(res.labels, res.predictions)),
                             labels)
    report = aggregate_report(class_metrics(matrix), matrix)
    out = Path(args.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", report)
    write_confusion_csv(out / "confusion.csv", matrix)
    text = render_confusion_text(matrix)
    (out / "confusion.txt").write_text(text, encoding="utf-8")
    cfg.save(out / "config.resolved")
    if not args.no_figures:
        from lidnet.plotting import plot_confusion

        plot_confusion(matrix, out / "confusion.png")
    print(text, end="")
    print(f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} loss={res.loss:.4f}")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    labels = cfg.labels()
    feats = load_features(args.path, cfg.features())
    model = _load_model(cfg, args.checkpoint)
    probs = softmax_probs(model.forward(feats.frames, None, "eval").data)
    print(f"predicted\t{labels.codes[int(np.argmax(probs))]}")
    for code, p in zip(labels.codes, probs):
        print(f"{code}\t{p:.6f}")
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args, extra)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"lidnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"lidnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"lidnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
