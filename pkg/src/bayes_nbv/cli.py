"""Command-line pipeline: gen-data, train, eval, analyze, adjust, report.

Every output lands under ``--out`` with a fixed name::

    data/{train,valid,test,test_novel}.ndjson, data/manifest.json
    checkpoint.json, learning_curve.csv
    eval_<split>_<mode>.ndjson, summary_<split>_<mode>.json
    scatter.csv, rejection_<field>_<metric>.csv, histogram.csv, fit.json, calibration.json
    adjust_report.json
    report.md
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .bayesian import DEFAULT_N_MC, deterministic_report, mc_predict, uncertainty_report
from .dataset import DataConfig, DatasetError, read_dataset, stack_samples
from .network import (Architecture, TrainConfig, TrainingDiverged, init_params, load_checkpoint,
                      loss, predict, save_checkpoint, train)

log = logging.getLogger("bayes_nbv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLIT_FILES = {"train": "train", "valid": "valid", "test": "test", "novel": "test_novel"}


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    dropout_rate: float = 0.5
    point_widths: list = field(default_factory=lambda: [3, 64, 128])
    head_hidden: list = field(default_factory=lambda: [128, 64])


@dataclass
class TrainSection:
    epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4


@dataclass
class EvalSection:
    n_mc: int = DEFAULT_N_MC
    calibration_split: str = "valid"
    accuracy_target: float | None = 60.0
    error_target: float | None = None
    n_thresholds: int = 40
    histogram_bins: int = 10


@dataclass
class RunConfig:
    master_seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    SECTIONS = ("data", "model", "train", "eval")

    def update(self, doc: dict, where: str) -> None:
        for key, value in doc.items():
            if key == "master_seed":
                self.master_seed = value
            elif key in self.SECTIONS and isinstance(value, dict):
                section = getattr(self, key)
                names = {f.name for f in fields(section)}
                for k, v in value.items():
                    if k not in names:
                        raise ConfigError(f"{where}: unknown key {key}.{k}")
                    setattr(section, k, v)
            else:
                raise ConfigError(f"{where}: unknown key {key!r}")

    def validate(self) -> None:
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        self.data.master_seed = self.master_seed
        try:
            self.data.validate()
        except DatasetError as exc:
            raise ConfigError(str(exc)) from None
        if self.eval.n_mc < 2:
            raise ConfigError("n_mc must be >= 2")
        if not 0.0 <= self.model.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.train.epochs < 1 or self.train.batch_size < 1 or self.train.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if self.eval.calibration_split not in SPLIT_FILES:
            raise ConfigError(f"unknown calibration split {self.eval.calibration_split!r}")
        if self.eval.n_thresholds < 2 or self.eval.histogram_bins < 1:
            raise ConfigError("n_thresholds must be >= 2 and histogram_bins >= 1")

    def architecture(self) -> Architecture:
        try:
            return Architecture.default(self.data.n_views, self.model.dropout_rate,
                                        self.model.point_widths, self.model.head_hidden)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad architecture: {exc}") from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.train.epochs, self.train.batch_size, self.train.learning_rate,
                           self.train.weight_decay, self.master_seed)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, **{s: asdict(getattr(self, s)) for s in self.SECTIONS}}


# flag name -> (section, key)
OVERRIDES = {
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "learning_rate": ("train", "learning_rate"),
    "weight_decay": ("train", "weight_decay"),
    "dropout_rate": ("model", "dropout_rate"),
    "n_mc": ("eval", "n_mc"),
    "per_family": ("data", "per_family"),
    "steps": ("data", "steps"),
    "n_points": ("data", "n_points"),
}


def load_config(args) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        cfg.update(doc, args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    for flag, (section, key) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    cfg.validate()
    return cfg


def _per_family(text: str) -> dict:
    """``train=10,valid=2,test=3,test_novel=3``"""
    try:
        return {k.strip(): int(v) for k, v in (item.split("=") for item in text.split(","))}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected split=count pairs, got {text!r}") from None


# ---------------------------------------------------------------- helpers

def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DatasetError(f"missing {path} ({hint})")
    return path


def _load_split(out: Path, split: str, cfg: RunConfig) -> list:
    path = _need(out / "data" / f"{SPLIT_FILES[split]}.ndjson", "run gen-data first")
    samples = list(read_dataset(path, cfg.data.n_in))
    if not samples:
        raise DatasetError(f"{path} holds no samples")
    for s in samples:
        if s.n_views != cfg.data.n_views:
            raise DatasetError(f"{path}: sample {s.model_id} has {s.n_views} views, expected {cfg.data.n_views}")
    return samples


def _load_params(out: Path, args, cfg: RunConfig):
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / "checkpoint.json"
    _need(path, "run train first")
    try:
        params = load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise DatasetError(str(exc)) from None
    rate = getattr(args, "dropout_rate", None)
    if rate is not None and rate != params.arch.dropout_rate:
        # an explicit flag overrides the trained rate at inference; weights are unchanged
        params.arch = Architecture(params.arch.per_point_widths, params.arch.head_widths,
                                   rate, params.arch.activation)
    return params


def _records_path(out: Path, split: str, mode: str) -> Path:
    return out / f"eval_{split}_{mode}.ndjson"


def _summary_path(out: Path, split: str, mode: str) -> Path:
    return out / f"summary_{split}_{mode}.json"


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig, out: Path, args) -> int:
    from .dataset import build_dataset

    split = build_dataset(cfg.data, out / "data")
    log.info("wrote %d models under %s", len(split.models), out / "data")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    samples = _load_split(out, "train", cfg)
    valid_path = out / "data" / "valid.ndjson"
    valid = _load_split(out, "valid", cfg) if valid_path.exists() and valid_path.stat().st_size else None
    params = init_params(cfg.architecture(), cfg.master_seed)
    params, history = train(params, samples, cfg.train_config(), valid=valid)
    save_checkpoint(params, out / "checkpoint.json", extra={"config": cfg.to_dict()})
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]),
                        "" if row["valid_loss"] is None else repr(row["valid_loss"])])
    log.info("final train loss %.6g (epoch 1: %.6g)", history[-1]["train_loss"], history[0]["train_loss"])
    return EXIT_OK


def evaluate_split(params, samples, mode: str, n_mc: int, seed: int, weight_decay: float):
    """EvalRecords plus the summary ``{loss, euclid_error, squared_error, accuracy, n}``."""
    if mode == "det":
        preds = predict(params, samples)
        records = [ev.make_record(s, f, deterministic_report(params.arch.n_views)) for s, f in zip(samples, preds)]
    else:
        sets = mc_predict(params, samples, n_mc, seed)
        records = [ev.make_record(s, m.fp, uncertainty_report(m), m.samples) for s, m in zip(samples, sets)]
    _, _, gt = stack_samples(samples)
    fp = np.stack([r.fp for r in records])
    value = loss(params, gt, fp, weight_decay)
    if not math.isfinite(value):
        raise TrainingDiverged("non-finite evaluation loss")
    return records, {"loss": value, **ev.model_metrics(records)}


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    params = _load_params(out, args, cfg)
    samples = _load_split(out, args.split, cfg)
    records, summary = evaluate_split(params, samples, args.mode, cfg.eval.n_mc, cfg.master_seed,
                                      cfg.train.weight_decay)
    ev.write_records(records, _records_path(out, args.split, args.mode), dump_mc=args.dump_mc)
    ev.write_json(summary, _summary_path(out, args.split, args.mode))
    log.info("%s/%s: accuracy %.2f%%, error %.4f", args.split, args.mode, summary["accuracy"], summary["euclid_error"])
    return EXIT_OK


def _read_records(path: Path, hint: str) -> list:
    _need(path, hint)
    try:
        records = ev.read_records(path)
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if not records:
        raise DatasetError(f"{path} holds no records")
    return records


def _eval_records(out: Path, args, split: str) -> list:
    path = Path(args.records) if args.records else _records_path(out, split, "mc")
    return _read_records(path, f"run eval --split {split} --mode mc first")


def _calibration_records(out: Path, args, cfg: RunConfig) -> list:
    split = cfg.eval.calibration_split
    path = Path(args.calibration) if args.calibration else _records_path(out, split, "mc")
    return _read_records(path, f"run eval --split {split} --mode mc first")


def cmd_analyze(cfg: RunConfig, out: Path, args) -> int:
    records = _eval_records(out, args, args.split)
    calib = _calibration_records(out, args, cfg)
    ev.write_scatter(records, out / "scatter.csv", "sigma_whole")
    for fld in ("sigma_whole", "sigma_accuracy"):
        for metric in ("error", "accuracy"):
            unc = [r.uncertainty(fld) for r in records]
            thr = ev.default_thresholds(unc, cfg.eval.n_thresholds)
            ev.write_rejection(ev.rejection_curve(records, fld, metric, thr), out / f"rejection_{fld}_{metric}.csv")
    ev.write_histogram(ev.accuracy_histogram(records, "sigma_accuracy", cfg.eval.histogram_bins), out / "histogram.csv")
    try:
        fit = ev.linear_fit([r.report.sigma_whole for r in records], [r.euclid_error for r in records]).to_dict()
    except ValueError as exc:
        fit = {"slope": None, "intercept": None, "r_squared": None, "error": str(exc)}
    ev.write_json(fit, out / "fit.json")
    table = ev.calibrate(calib, cfg.eval.accuracy_target, cfg.eval.error_target)
    ev.write_json(table.to_dict(), out / "calibration.json")
    return EXIT_OK


def cmd_adjust(cfg: RunConfig, out: Path, args) -> int:
    records = _eval_records(out, args, args.split)
    cal_path = Path(args.table) if args.table else out / "calibration.json"
    if cal_path.exists():
        table = ev.CalibrationTable.from_dict(json.loads(cal_path.read_text()))
    else:
        table = ev.calibrate(_calibration_records(out, args, cfg), cfg.eval.accuracy_target, cfg.eval.error_target)
    ev.write_json(ev.adjustment_report(records, table), out / "adjust_report.json")
    return EXIT_OK


def _maybe_json(path: Path):
    return json.loads(path.read_text()) if path.exists() else None


def _fmt(v, spec=".4f") -> str:
    return "n/a" if v is None else format(v, spec)


def cmd_report(cfg: RunConfig, out: Path, args) -> int:
    lines = ["# Next-best-view uncertainty report", "", f"master_seed: {cfg.master_seed}", ""]
    lines += ["## Baseline vs Bayesian", "",
              "| split | mode | n | loss | euclid error | squared error | accuracy % |",
              "|---|---|---|---|---|---|---|"]
    found = False
    for split in SPLIT_FILES:
        for mode in ("det", "mc"):
            s = _maybe_json(_summary_path(out, split, mode))
            if s:
                found = True
                lines.append(f"| {split} | {mode} | {s['n']} | {_fmt(s['loss'])} | {_fmt(s['euclid_error'])} | "
                             f"{_fmt(s['squared_error'])} | {_fmt(s['accuracy'], '.2f')} |")
    if not found:
        raise DatasetError(f"no evaluation summaries under {out} (run eval first)")
    fit = _maybe_json(out / "fit.json")
    if fit:
        lines += ["", "## Error vs sigma_whole", "",
                  f"slope {_fmt(fit['slope'])}, intercept {_fmt(fit['intercept'])}, R^2 {_fmt(fit['r_squared'])}"]
    for fld, metric in (("sigma_accuracy", "accuracy"), ("sigma_whole", "error")):
        path = out / f"rejection_{fld}_{metric}.csv"
        if not path.exists():
            continue
        with open(path) as fh:
            rows = [r for r in csv.DictReader(fh) if r["accepted_value"]]
        better = max if metric == "accuracy" else min
        eligible = [r for r in rows if float(r["accepted_fraction"]) >= 0.2] or rows
        best = better(eligible, key=lambda r: float(r["accepted_value"]))
        overall = rows[-1]["accepted_value"]
        lines += ["", f"## Rejection by {fld} ({metric})", "",
                  f"overall {float(overall):.4f}; best with at least 20% accepted: {float(best['accepted_value']):.4f} "
                  f"at threshold {float(best['threshold']):.4f} ({100 * float(best['accepted_fraction']):.1f}% accepted)"]
    cal = _maybe_json(out / "calibration.json")
    if cal:
        for name, choice in cal["thresholds"].items():
            state = f"threshold {_fmt(choice['threshold'])}" if choice["attainable"] else "unattainable"
            lines += ["", f"calibrated {name} ({choice['metric']} target {choice['target']}): {state}, "
                          f"achieved {_fmt(choice['achieved'])} with {100 * choice['accepted_fraction']:.1f}% accepted"]
    adj = _maybe_json(out / "adjust_report.json")
    if adj:
        lines += ["", "## Coverage adjustment", "", "| formula | sign | error | accuracy % | error change | accuracy change |",
                  "|---|---|---|---|---|---|"]
        for formula in ev.FORMULAS:
            for sign in ev.SIGNS:
                a = adj[formula][sign]
                lines.append(f"| {formula} | {sign} | {a['euclid_error']:.4f} | {a['accuracy']:.2f} | "
                             f"{a['error_change']:+.6f} | {a['accuracy_change']:+.4f} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "adjust": cmd_adjust,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default="run", help="output directory (default: run)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bayes-nbv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate scans and write the dataset")
    p.add_argument("--per-family", dest="per_family", type=_per_family)
    p.add_argument("--steps", type=int)
    p.add_argument("--n-points", dest="n_points", type=int)

    p = sub.add_parser("train", parents=[common], help="train the coverage regressor")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    p.add_argument("--mode", choices=("det", "mc"), default="mc")
    p.add_argument("--n-mc", dest="n_mc", type=int)
    p.add_argument("--split", choices=tuple(SPLIT_FILES), default="test")
    p.add_argument("--dump-mc", dest="dump_mc", action="store_true", help="store every MC pass in the records")
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--checkpoint")

    for name, text in (("analyze", "uncertainty analyses and calibration"), ("adjust", "coverage adjustment report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--split", choices=tuple(SPLIT_FILES), default="test")
        p.add_argument("--records", help="MC eval records (default: eval_<split>_mc.ndjson)")
        p.add_argument("--calibration", help="MC eval records of the calibration split")
        if name == "adjust":
            p.add_argument("--table", help="calibration.json (default: the one under --out)")

    sub.add_parser("report", parents=[common], help="assemble report.md from existing outputs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
