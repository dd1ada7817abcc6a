"""Command line entry points: crossval, train, evaluate, gradcheck.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 gradcheck failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (SCHEMAS, DataError, DatasetTable, apply_standardization,
                   fit_standardization, load_csv, prepare_dataset,
                   stratified_kfold, stratified_subsample, synth_dataset)
from .metrics import (EvalReport, aggregate_folds, binary_metrics, confusion,
                      confusion_csv, per_class_metrics, render_report)
from .model import LuNetSpec
from .train import (RmsPropConfig, TrainConfig, fit, standard_gradient_suite)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    data_paths: tuple = ()
    task: str = "binary"
    folds: int = 10
    seed: int = 0
    output_dir: str = "out"
    subsample: int = 0  # 0 = use everything
    checkpoint: str = ""
    levels: tuple = (64, 128, 256)
    kernel_size: int = 3
    pool_size: int = 2
    dropout_rate: float = 0.5
    final_conv_filters: int = 256
    epochs: int = 20
    batch_size: int = 32
    shuffle: bool = True
    learning_rate: float = 0.001
    rho: float = 0.9
    opt_epsilon: float = 1e-7
    synth_samples: int = 512
    synth_features: int = 64
    synth_separation: float = 4.0
    synth_classes: int = 0  # 0 = derive from task

    def validate(self, need_folds: bool = False):
        if self.dataset not in ("synthetic", *SCHEMAS):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.task not in ("binary", "multi"):
            raise ConfigError(f"unknown task {self.task!r}")
        if need_folds and self.folds < 2:
            raise ConfigError(f"cross-validation needs folds >= 2, got {self.folds}")
        if self.dataset != "synthetic":
            if not self.data_paths:
                raise ConfigError(f"dataset {self.dataset!r} requires --data-path")
            for p in self.data_paths:
                if not os.path.exists(p):
                    raise ConfigError(f"data path does not exist: {p}")


_CONFIG_KEYS = {
    "dataset": ("dataset", str),
    "data_path": ("data_paths", lambda v: tuple(p for p in v.split(",") if p)),
    "task": ("task", str),
    "folds": ("folds", int),
    "seed": ("seed", int),
    "output_dir": ("output_dir", str),
    "subsample": ("subsample", int),
    "checkpoint": ("checkpoint", str),
    "model.levels": ("levels", lambda v: tuple(int(x) for x in v.split(","))),
    "model.kernel_size": ("kernel_size", int),
    "model.pool_size": ("pool_size", int),
    "model.dropout_rate": ("dropout_rate", float),
    "model.final_conv_filters": ("final_conv_filters", int),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.shuffle": ("shuffle", lambda v: v.lower() in ("1", "true", "yes")),
    "optimizer.learning_rate": ("learning_rate", float),
    "optimizer.rho": ("rho", float),
    "optimizer.epsilon": ("opt_epsilon", float),
    "synth.samples": ("synth_samples", int),
    "synth.features": ("synth_features", int),
    "synth.separation": ("synth_separation", float),
    "synth.classes": ("synth_classes", int),
}


def parse_config_file(path: str) -> dict:
    """Flat key=value text with dotted keys; '#' starts a comment line."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path} line {i}: bad config entry {line!r}")
                attr, conv = _CONFIG_KEYS[key]
                try:
                    out[attr] = conv(value.strip())
                except ValueError as e:
                    raise ConfigError(f"{path} line {i}: {e}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return out


def build_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = replace(cfg, **parse_config_file(args.config))
    overrides = {}
    flag_map = {
        "dataset": "dataset", "task": "task", "folds": "folds", "seed": "seed",
        "output_dir": "output_dir", "subsample": "subsample",
        "epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
        "checkpoint": "checkpoint",
    }
    for flag, attr in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[attr] = v
    if getattr(args, "data_path", None):
        overrides["data_paths"] = tuple(args.data_path)
    if getattr(args, "levels", None):
        try:
            overrides["levels"] = tuple(int(x) for x in args.levels.split(","))
        except ValueError:
            raise ConfigError(f"bad --levels value {args.levels!r}") from None
    return replace(cfg, **overrides)


def load_run_dataset(cfg: RunConfig) -> DatasetTable:
    """Raw (unstandardized) encoded table for the configured dataset."""
    if cfg.dataset == "synthetic":
        classes = cfg.synth_classes or (2 if cfg.task == "binary" else 5)
        table = synth_dataset(classes, cfg.synth_samples, cfg.synth_features,
                              cfg.synth_separation, cfg.seed)
    else:
        schema = SCHEMAS[cfg.dataset]
        raw = load_csv(cfg.data_paths[0], schema, cfg.data_paths[1:])
        table = prepare_dataset(raw, cfg.task)
    if cfg.subsample and cfg.subsample < table.features.shape[0]:
        idx = stratified_subsample(table.labels, cfg.subsample, cfg.seed)
        table = replace(table, features=table.features[idx], labels=table.labels[idx])
    return table


def make_spec(cfg: RunConfig, input_features: int, num_classes: int,
              init_seed: int) -> LuNetSpec:
    try:
        return LuNetSpec(
            input_features=input_features, num_classes=num_classes,
            levels=cfg.levels, kernel_size=cfg.kernel_size, pool_size=cfg.pool_size,
            dropout_rate=cfg.dropout_rate, final_conv_filters=cfg.final_conv_filters,
            init_seed=init_seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def predict_batched(model, features: np.ndarray, chunk: int = 256) -> np.ndarray:
    preds = [model.predict_class(features[i:i + chunk])
             for i in range(0, features.shape[0], chunk)]
    return np.concatenate(preds)


def _train_one_fold(cfg: RunConfig, table: DatasetTable, train_idx, val_idx,
                    fold: int):
    mean, std = fit_standardization(table.features, train_idx)
    x = apply_standardization(table.features, mean, std)
    spec = make_spec(cfg, x.shape[1], len(table.class_names), cfg.seed + fold)
    try:
        model = model_mod.build(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                     seed=cfg.seed + fold, shuffle=cfg.shuffle)
    oc = RmsPropConfig(learning_rate=cfg.learning_rate, rho=cfg.rho,
                       epsilon=cfg.opt_epsilon)
    fit(model, x[train_idx], table.labels[train_idx], tc, oc,
        log=lambda line: print(f'{{"fold": {fold}, ' + line[1:]))
    model.set_mode("infer")
    pred = predict_batched(model, x[val_idx])
    cm = confusion(table.labels[val_idx], pred, table.class_names)
    return model, mean, std, cm


def write_report(cfg: RunConfig, report: EvalReport):
    os.makedirs(cfg.output_dir, exist_ok=True)
    jsonl = render_report(report, "json-lines")
    with open(os.path.join(cfg.output_dir, "report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(jsonl)
    with open(os.path.join(cfg.output_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(render_report(report, "csv"))
    for fold, _, cm in report.per_fold:
        path = os.path.join(cfg.output_dir, f"confusion_fold{fold}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(confusion_csv(cm))
    # machine-parseable first, pretty afterwards
    print(jsonl, end="")
    print(render_report(report, "pretty-table"), end="")


def assemble_report(per_fold_cms) -> EvalReport:
    per_fold = [(fold, binary_metrics(cm, normal_index=0), cm)
                for fold, cm in per_fold_cms]
    pooled = per_fold_cms[0][1].counts.copy()
    for _, cm in per_fold_cms[1:]:
        pooled += cm.counts
    pooled_cm = replace(per_fold_cms[0][1], counts=pooled)
    return EvalReport(
        per_fold=per_fold,
        aggregate=aggregate_folds([ms for _, ms, _ in per_fold]),
        per_class=per_class_metrics(pooled_cm))


def cmd_crossval(cfg: RunConfig) -> int:
    cfg.validate(need_folds=True)
    table = load_run_dataset(cfg)
    plan = stratified_kfold(table.labels, cfg.folds, cfg.seed)
    cms = []
    for fold in range(cfg.folds):
        _, _, _, cm = _train_one_fold(cfg, table, plan.train_indices(fold),
                                      plan.val_indices(fold), fold)
        cms.append((fold, cm))
    write_report(cfg, assemble_report(cms))
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    """Single-split convenience: stratified k=5, fold 0 held out."""
    cfg.validate()
    table = load_run_dataset(cfg)
    plan = stratified_kfold(table.labels, 5, cfg.seed)
    model, mean, std, cm = _train_one_fold(
        cfg, table, plan.train_indices(0), plan.val_indices(0), 0)
    os.makedirs(cfg.output_dir, exist_ok=True)
    ckpt_path = cfg.checkpoint or os.path.join(cfg.output_dir, "model.lunet")
    save_checkpoint(ckpt_path, model, mean, std, table.class_names,
                    table.encoded_columns, cfg.task)
    write_report(cfg, assemble_report([(0, cm)]))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("evaluate requires --checkpoint")
    if not os.path.exists(cfg.checkpoint):
        raise ConfigError(f"checkpoint does not exist: {cfg.checkpoint}")
    cfg.validate()
    model, mean, std, class_names, encoded_columns, task = load_checkpoint(cfg.checkpoint)
    if task != cfg.task:
        raise ConfigError(f"checkpoint was trained for task {task!r}, got {cfg.task!r}")
    table = load_run_dataset(cfg)
    if table.features.shape[1] != mean.shape[0]:
        raise DataError(
            f"encoded width mismatch: checkpoint expects {mean.shape[0]} columns, "
            f"found {table.features.shape[1]}")
    # standardization always comes from the checkpoint, never re-fit
    x = apply_standardization(table.features, mean, std)
    pred = predict_batched(model, x)
    cm = confusion(table.labels, pred, class_names)
    write_report(cfg, assemble_report([(0, cm)]))
    return EXIT_OK


def cmd_gradcheck(corrupt: str | None = None) -> int:
    results = standard_gradient_suite(corrupt=corrupt)
    failed = []
    for name, err in results.items():
        ok = err < GRADCHECK_TOLERANCE
        print(f'{{"layer": "{name}", "max_rel_error": {err:.3e}, '
              f'"pass": {"true" if ok else "false"}}}')
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}")
        return EXIT_GRADCHECK
    print("gradcheck passed: all layers within tolerance "
          f"{GRADCHECK_TOLERANCE:g}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lunet",
        description="Hierarchical CNN+LSTM intrusion detector: train, "
                    "cross-validate, evaluate, gradient-check.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--dataset", choices=["nsl-kdd", "unsw-nb15", "synthetic"])
        p.add_argument("--data-path", action="append",
                       help="dataset CSV; repeat to merge several files")
        p.add_argument("--task", choices=["binary", "multi"])
        p.add_argument("--folds", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--levels", help="comma-separated level widths")
        p.add_argument("--subsample", type=int,
                       help="stratified subsample size (0 = all rows)")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--checkpoint")

    for name in ("crossval", "train", "evaluate"):
        add_common(sub.add_parser(name))
    sub.add_parser("gradcheck")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        cfg = build_run_config(args)
        if args.command == "crossval":
            return cmd_crossval(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        return cmd_evaluate(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
